"""
Management command projecting 3D hand keypoints into the image.
"""
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from handcrop.core.camera import CropBox, project
from handcrop.core.commands import HandcropCommand
from handcrop.core.experiments import load_config
from handcrop.core.hand_model import posed_joints
from handcrop.core.serializers import load_hand_params, load_keypoints_3d


class Command(HandcropCommand):
    help = 'Project 21 3D keypoints (or a posed hand) with pinhole intrinsics and print the pixels as JSON'
    command_name = 'project'

    def add_command_arguments(self, parser):
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON (default: settings camera)')
        parser.add_argument('--keypoints', help='3D keypoints JSON ({"joints": 21x3}, mm)')
        parser.add_argument('--params', help='Hand parameters JSON, posed with the hand model')
        parser.add_argument('--model', help='Hand model JSON or MANO .npz/.pkl')

    def run(self, **options):
        if (options['keypoints'] is None) == (options['params'] is None):
            raise ValidationError(_('Give exactly one of --keypoints or --params.'), code='parameter')
        cam = load_config(intrinsics=options['intrinsics']).camera()
        if options['keypoints']:
            joints = load_keypoints_3d(options['keypoints']).joints
        else:
            joints = posed_joints(self.hand_model(options['model']), load_hand_params(options['params']))

        pixels = project(cam, joints)
        self.write_json({
            "points": pixels.points,
            "depths": joints[:, 2],
            "crop_box": CropBox.from_keypoints(pixels).as_dict(),
        })
