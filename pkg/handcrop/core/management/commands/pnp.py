"""
Management command aligning 3D hand keypoints to 2D reference keypoints.
"""
import numpy as np

from handcrop.core.alignment import find_ambiguity_witness, pnp_align_with_shift, solve_pnp
from handcrop.core.camera import project
from handcrop.core.commands import HandcropCommand
from handcrop.core.experiments import load_config
from handcrop.core.serializers import load_keypoints_2d, load_keypoints_3d

CORNERS = {"tl": (0, 0), "tr": (1, 0), "bl": (0, 1), "br": (1, 1)}


class Command(HandcropCommand):
    help = 'Solve PnP between 3D and 2D hand keypoints and print the pose as JSON'
    command_name = 'pnp'

    def add_command_arguments(self, parser):
        parser.add_argument('--hand3d', required=True, help='3D keypoints JSON ({"joints": 21x3}, mm)')
        parser.add_argument('--ref2d', help='2D reference keypoints JSON (default: projection of --hand3d)')
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON (default: settings camera)')
        parser.add_argument(
            '--shift',
            nargs=2,
            type=float,
            metavar=('DX', 'DY'),
            help='Move the reference keypoints by this many pixels before aligning'
        )
        parser.add_argument(
            '--witness',
            choices=sorted(CORNERS),
            help='Sweep shifts toward this image corner and report the largest 3D change PnP explains'
        )
        parser.add_argument('--steps', type=int, default=8, help='Shifts in the witness sweep (default: 8)')
        parser.add_argument('--tolerance', type=float, default=0.5, help='Witness residual bound in px')

    def run(self, **options):
        config = load_config(intrinsics=options['intrinsics'])
        cam = config.camera()
        hand3d = load_keypoints_3d(options['hand3d'])

        if options['witness']:
            witness = find_ambiguity_witness(
                hand3d,
                cam,
                corner=CORNERS[options['witness']],
                steps=options['steps'],
                tolerance=options['tolerance'],
                margin=config.shift_margin_px,
            )
            if witness is None:
                self.write_json({"witness": None})
                return
            self.write_json({
                "witness": witness.alignment.as_dict(),
                "baseline": witness.baseline.as_dict(),
                "mpjpe_difference_mm": witness.mpjpe_difference,
                "rootrel_difference_mm": witness.rootrel_difference,
                "candidates": [
                    {"shift": shift, "residual_px": residual, "mpjpe_difference_mm": difference}
                    for shift, residual, difference in witness.candidates
                ],
            })
            return

        ref2d = load_keypoints_2d(options['ref2d']) if options['ref2d'] else project(cam, hand3d)
        if options['shift']:
            alignment = pnp_align_with_shift(ref2d, hand3d, cam, np.asarray(options['shift']))
            self.write_json({**alignment.as_dict(), "residual_px": alignment.residual})
            return

        solution = solve_pnp(hand3d.joints, ref2d.points, cam)
        self.write_json({
            **solution.pose.as_dict(),
            "residual_px": solution.residual,
            "iterations": solution.iterations,
            "initialization": solution.initialization,
        })
