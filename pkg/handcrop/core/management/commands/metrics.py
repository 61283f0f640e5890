"""
Management command evaluating predicted hand keypoints against ground truth.
"""
from handcrop.core.commands import HandcropCommand
from handcrop.core.metrics import evaluate_batch
from handcrop.core.serializers import load_frames, load_intrinsics


class Command(HandcropCommand):
    help = 'Print MPJPE, MRRPE and 2D reprojection error of predictions as JSON'
    command_name = 'metrics'

    def add_command_arguments(self, parser):
        parser.add_argument('--pred', required=True, help='Predicted keypoints JSON')
        parser.add_argument('--gt', required=True, help='Ground-truth keypoints JSON')
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON, needed for the reprojection error')
        parser.add_argument('--workers', type=int, default=1, help='Worker threads (default: 1)')
        parser.add_argument('--per-frame', action='store_true', help='Also list per-frame errors')

    def run(self, **options):
        frames = load_frames(options['pred'], options['gt'])
        cam = load_intrinsics(options['intrinsics']) if options['intrinsics'] else None
        batch = evaluate_batch(frames, cam, workers=max(1, options['workers']))
        report = batch.as_dict()
        if options['per_frame']:
            report["per_frame"] = [
                {
                    "id": frame.frame_id,
                    "mpjpe_mm": frame.mpjpe,
                    "mrrpe_mm": frame.mrrpe,
                    "reprojection_px": frame.reprojection,
                }
                for frame in batch.frames
            ]
        self.write_json(report)
