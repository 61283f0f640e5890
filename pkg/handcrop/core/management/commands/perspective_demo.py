"""
Management command moving one 3D hand across the field of view.

The same hand, translated sideways, projects to visibly different 2D
keypoint patterns; the command writes the projections, their centered 2D
error to the first placement and the KPE of each crop, plus an SVG overlay.
"""
from handcrop.core.camera import CropBox, kpe_sparse, perspective_demo
from handcrop.core.commands import HandcropCommand
from handcrop.core.metrics import centered_2d_error
from handcrop.core.plots import skeleton_svg
from handcrop.core.population import default_reference_params
from handcrop.core.serializers import load_hand_params, write_json

DEFAULT_OFFSETS = (-200.0, -100.0, 0.0, 100.0, 200.0)


class Command(HandcropCommand):
    help = 'Project one hand at several lateral offsets and plot the 2D skeletons'
    experiment = True
    command_name = 'perspective_demo'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--offsets',
            nargs='+',
            type=float,
            default=list(DEFAULT_OFFSETS),
            help='Lateral root offsets in mm (default: -200 -100 0 100 200)'
        )
        parser.add_argument('--params', help='Hand parameters JSON (default: reference hand)')
        parser.add_argument('--model', help='Hand model JSON or MANO .npz/.pkl')
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON')

    def config_overrides(self, options):
        return {'intrinsics': options['intrinsics']}

    def run(self, **options):
        recorder = self.start_run(offsets=options['offsets'])
        recorder.add_input("intrinsics", self.config.intrinsics)
        recorder.add_input("params", options['params'])
        model = self.hand_model(options['model'])
        cam = self.config.camera()
        params = load_hand_params(options['params']) if options['params'] else default_reference_params(model.shape_rank)

        placements = perspective_demo(cam, params, options['offsets'], model=model)
        first = placements[0]
        rows = []
        for offset, placement in zip(options['offsets'], placements):
            box = CropBox.from_keypoints(placement)
            rows.append({
                "offset_mm": offset,
                "points": placement.points,
                "centered_2d_err_to_first": centered_2d_error(placement, first),
                "crop_box": box.as_dict(),
                "kpe_center": kpe_sparse(cam, box).center,
            })
        write_json(recorder.output("perspective.json"), {"intrinsics": cam.as_dict(), "placements": rows})
        recorder.output("perspective.svg").write_text(
            skeleton_svg(cam, placements, [f"{offset:g} mm" for offset in options['offsets']]),
            encoding="utf-8",
        )
        recorder.finish()

        for row in rows:
            self.stdout.write(
                f"offset {row['offset_mm']:g} mm: centered 2D error to first {row['centered_2d_err_to_first']:.3f} px"
            )
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(recorder.outputs)} files to {recorder.output_dir}"))
