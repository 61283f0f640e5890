"""
Management command printing the intrinsics-aware positional encoding of a crop.
"""
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from handcrop.core.camera import CropBox, kpe_dense, kpe_sparse
from handcrop.core.commands import HandcropCommand
from handcrop.core.experiments import load_config
from handcrop.core.serializers import write_kpe_dense_csv


class Command(HandcropCommand):
    help = 'Print the sparse (corners and center) or dense KPE of a crop box as JSON'
    command_name = 'kpe'

    def add_command_arguments(self, parser):
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON (default: settings camera)')
        parser.add_argument(
            '--box',
            nargs=4,
            type=float,
            metavar=('X_MIN', 'Y_MIN', 'X_MAX', 'Y_MAX'),
            help='Crop box in pixels'
        )
        parser.add_argument(
            '--center',
            nargs=3,
            type=float,
            metavar=('CX', 'CY', 'SIDE'),
            help='Square crop box by center and side length'
        )
        parser.add_argument('--mode', choices=('sparse', 'dense'), default='sparse')
        parser.add_argument('--grid', type=int, default=8, help='Cells per side of the dense map (default: 8)')
        parser.add_argument('--csv', help='Also write the dense map as CSV to this path')

    def run(self, **options):
        if (options['box'] is None) == (options['center'] is None):
            raise ValidationError(_('Give exactly one of --box or --center.'), code='parameter')
        if options['box'] is not None:
            box = CropBox(*options['box'])
        else:
            cx, cy, side = options['center']
            box = CropBox.from_center(cx, cy, side)
        cam = load_config(intrinsics=options['intrinsics']).camera()

        if options['mode'] == 'sparse':
            encoding = kpe_sparse(cam, box)
            self.write_json({"mode": "sparse", "box": box.as_dict(), "values": encoding.values})
            return

        dense = kpe_dense(cam, box, options['grid'])
        if options['csv']:
            write_kpe_dense_csv(options['csv'], dense)
        self.write_json({"mode": "dense", "box": box.as_dict(), "grid": options['grid'], "values": dense})
