"""
Management command rendering the soft silhouette of a posed hand.
"""
import numpy as np

from handcrop.core.commands import HandcropCommand
from handcrop.core.hand_model import forward_kinematics
from handcrop.core.population import default_reference_params
from handcrop.core.serializers import load_hand_params, write_json, write_pgm
from handcrop.core.softras import MaskImage, default_sigma, render_camera, render_soft_silhouette


class Command(HandcropCommand):
    help = 'Render a posed hand with the soft rasterizer and save the mask as PGM'
    experiment = True
    command_name = 'render_silhouette'

    def add_command_arguments(self, parser):
        parser.add_argument('--params', help='Hand parameters JSON (default: reference hand)')
        parser.add_argument('--model', help='Hand model JSON or MANO .npz/.pkl')
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON')
        parser.add_argument('--size', type=int, help='Render width in px; the camera is rescaled to it')
        parser.add_argument('--sigma', type=float, help='Sharpness in px^2 (default: from SIGMA_FACTOR)')
        parser.add_argument('--threshold', type=float, default=0.5, help='Binarization threshold (default: 0.5)')
        parser.add_argument('--modal', action='store_true', help='Mark the mask as modal instead of amodal')

    def config_overrides(self, options):
        return {'render_size': options['size'], 'sigma': options['sigma'], 'intrinsics': options['intrinsics']}

    def run(self, **options):
        config = self.config
        recorder = self.start_run(threshold=options['threshold'], amodal=not options['modal'])
        recorder.add_input("intrinsics", config.intrinsics)
        recorder.add_input("params", options['params'])
        model = self.hand_model(options['model'])
        cam = config.camera()
        params = load_hand_params(options['params']) if options['params'] else default_reference_params(model.shape_rank)

        render_cam = render_camera(cam, config.render_size)
        sigma = config.sigma or default_sigma(render_cam.width, render_cam.height, config.sigma_factor)
        posed = forward_kinematics(model, params)
        render = render_soft_silhouette(
            posed.vertices,
            model.faces,
            cam,
            size=config.render_size,
            sigma=sigma,
            cutoff=config.cutoff_factor,
        )
        mask = MaskImage.from_silhouette(render, amodal=not options['modal'])
        write_pgm(recorder.output("silhouette.pgm"), mask, threshold=options['threshold'])
        recorder.output("silhouette.json")
        coverage = float(np.mean(render.occupancy >= options['threshold']))
        write_json(recorder.output("render.json"), {
            "width": render.width,
            "height": render.height,
            "sigma": render.sigma,
            "coverage": coverage,
            "intrinsics": render_cam.as_dict(),
        })
        recorder.finish()
        self.stdout.write(self.style.SUCCESS(
            f"Rendered {render.width}x{render.height} silhouette ({coverage:.1%} foreground) to {recorder.output_dir}"
        ))
