"""
Management command fitting a hand pose to an amodal silhouette.

The target is a PGM mask, or the soft render of ``--target-params``; with
neither, the initial pose's own render is the target and the fit reports
zero improvement.
"""
import logging

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from handcrop.core.commands import HandcropCommand
from handcrop.core.exceptions import FitError
from handcrop.core.hand_model import forward_kinematics
from handcrop.core.population import default_reference_params
from handcrop.core.serializers import load_hand_params, read_pgm, write_json, write_loss_csv
from handcrop.core.softras import (
    PARAMETER_BLOCKS,
    MaskImage,
    default_sigma,
    fit_pose_to_mask,
    render_camera,
    render_soft_silhouette,
)

logger = logging.getLogger(__name__)


class Command(HandcropCommand):
    help = 'Fit root pose and articulation to an amodal mask with the soft silhouette loss'
    experiment = True
    command_name = 'fit_silhouette'

    def add_command_arguments(self, parser):
        parser.add_argument('--init', help='Initial hand parameters JSON (default: reference hand)')
        parser.add_argument('--target', help='Target mask PGM (with JSON sidecar)')
        parser.add_argument('--target-params', help='Hand parameters JSON whose soft render is the target')
        parser.add_argument('--model', help='Hand model JSON or MANO .npz/.pkl')
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON')
        parser.add_argument('--steps', type=int, help='Maximum gradient steps')
        parser.add_argument('--step-size', type=float, help='Largest step size')
        parser.add_argument('--size', type=int, help='Render width in px')
        parser.add_argument('--sigma', type=float, help='Sharpness in px^2')
        parser.add_argument(
            '--blocks',
            nargs='+',
            choices=PARAMETER_BLOCKS,
            default=list(PARAMETER_BLOCKS),
            help='Parameter blocks to optimize (default: all)'
        )
        amodal = parser.add_mutually_exclusive_group()
        amodal.add_argument('--amodal', dest='amodal', action='store_const', const=True, help='Treat --target as amodal')
        amodal.add_argument('--modal', dest='amodal', action='store_const', const=False, help='Treat --target as modal')

    def config_overrides(self, options):
        return {
            'fit_steps': options['steps'],
            'fit_step_size': options['step_size'],
            'render_size': options['size'],
            'sigma': options['sigma'],
            'intrinsics': options['intrinsics'],
        }

    def run(self, **options):
        if options['target'] and options['target_params']:
            raise ValidationError(_('Give at most one of --target or --target-params.'), code='parameter')
        config = self.config
        recorder = self.start_run(blocks=options['blocks'])
        recorder.add_input("intrinsics", config.intrinsics)
        recorder.add_input("init", options['init'])
        recorder.add_input("target", options['target'])
        recorder.add_input("target_params", options['target_params'])
        model = self.hand_model(options['model'])
        cam = config.camera()
        init = load_hand_params(options['init']) if options['init'] else default_reference_params(model.shape_rank)

        render_cam = render_camera(cam, config.render_size)
        sigma = config.sigma or default_sigma(render_cam.width, render_cam.height, config.sigma_factor)
        if options['target']:
            target = read_pgm(options['target'], amodal=options['amodal'])
        else:
            source = load_hand_params(options['target_params']) if options['target_params'] else init
            render = render_soft_silhouette(
                forward_kinematics(model, source).vertices,
                model.faces,
                cam,
                size=config.render_size,
                sigma=sigma,
                cutoff=config.cutoff_factor,
            )
            target = MaskImage.from_silhouette(render, amodal=True)

        try:
            result = fit_pose_to_mask(
                model,
                init,
                target,
                cam,
                steps=config.fit_steps,
                step_size=config.fit_step_size,
                size=config.render_size,
                sigma=sigma,
                cutoff=config.cutoff_factor,
                blocks=options['blocks'],
            )
        except FitError as error:
            if error.losses:
                write_loss_csv(recorder.output("losses.csv"), error.losses, error.step_sizes)
                write_json(recorder.output("last_params.json"), error.params.as_dict())
            raise
        write_loss_csv(recorder.output("losses.csv"), result.losses, result.step_sizes)
        report = {
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
            "improvement": result.initial_loss - result.final_loss,
            "iterations": result.iterations,
            "reason": result.reason,
            "params": result.params.as_dict(),
        }
        write_json(recorder.output("fit.json"), report)
        recorder.finish()
        self.stdout.write(
            f"Loss {result.initial_loss:.6g} -> {result.final_loss:.6g} "
            f"(improvement {report['improvement']:.6g}) after {result.iterations} steps, stopped: {result.reason}"
        )
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(recorder.outputs)} files to {recorder.output_dir}"))
