"""
Management command measuring the perspective-distortion ambiguity.

A seeded synthetic population is compared against a reference hand, raw and
after (shift-augmented) PnP alignment. Each mode yields ``records_{mode}.csv``
and ``scatter_{mode}.svg``; ``summary.json`` and ``manifest.json`` describe
the run.
"""
import logging

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from handcrop.core.alignment import SCAN_MODES, ambiguity_scan, separation_check
from handcrop.core.commands import HandcropCommand
from handcrop.core.exceptions import CheckFailedError
from handcrop.core.plots import scatter_svg
from handcrop.core.population import default_reference_params, sample_population
from handcrop.core.serializers import load_hand_params, write_json, write_records_csv

logger = logging.getLogger(__name__)

Y_METRICS = {"rootrel": "rootrel_3d_err", "abs": "abs_3d_err"}


class Command(HandcropCommand):
    help = 'Compare a reference hand with a synthetic population and plot 3D error against centered 2D error'
    experiment = True
    command_name = 'ambiguity_scan'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--mode',
            choices=SCAN_MODES + ('all',),
            default='all',
            help='Alignment applied before comparing hands (default: all)'
        )
        parser.add_argument('--population', type=int, help='Population size, reference included')
        parser.add_argument('--lookalike-fraction', type=float, help='Share of 2D look-alike hands')
        parser.add_argument('--near', type=float, help='Near crop bucket threshold in px')
        parser.add_argument('--far', type=float, help='Far crop bucket threshold in px')
        parser.add_argument('--centered-max', type=float, help='Centered 2D error bound of matched pairs in px')
        parser.add_argument(
            '--y-metric',
            choices=sorted(Y_METRICS),
            default='rootrel',
            help='3D error on the y axis and in --check (default: rootrel)'
        )
        parser.add_argument('--factor', type=float, default=2.0, help='Required far/near ratio for --check')
        parser.add_argument(
            '--check',
            action='store_true',
            help='Fail unless far crops show at least --factor times the near-crop 3D error (raw mode)'
        )
        parser.add_argument('--intrinsics', help='Camera intrinsics JSON')
        parser.add_argument('--model', help='Hand model JSON or MANO .npz/.pkl')
        parser.add_argument('--reference', help='Reference hand parameters JSON')

    def config_overrides(self, options):
        return {
            'population_size': options['population'],
            'lookalike_fraction': options['lookalike_fraction'],
            'near_crop_px': options['near'],
            'far_crop_px': options['far'],
            'centered_max_px': options['centered_max'],
            'intrinsics': options['intrinsics'],
        }

    def run(self, **options):
        config = self.config
        modes = list(SCAN_MODES) if options['mode'] == 'all' else [options['mode']]
        metric = Y_METRICS[options['y_metric']]
        if options['check'] and 'raw' not in modes:
            raise ValidationError(_('--check compares raw crops; run it with --mode raw or all.'), code='parameter')

        recorder = self.start_run(mode=options['mode'], y_metric=metric, factor=options['factor'])
        recorder.add_input("intrinsics", config.intrinsics)
        recorder.add_input("reference", options['reference'])
        model = self.hand_model(options['model'])
        cam = config.camera()
        if options['reference']:
            reference = load_hand_params(options['reference'])
        else:
            reference = default_reference_params(model.shape_rank)

        hands = [reference]
        if config.population_size > 1:
            population = sample_population(
                model,
                reference,
                cam,
                config.population_size - 1,
                np.random.default_rng(config.seed),
                lookalike_fraction=config.lookalike_fraction,
                depth_range=config.depth_range_mm,
                workers=config.workers,
            )
            hands.extend(population.hands)
        self.stdout.write(f"Scanning {len(hands)} hands in mode(s): {', '.join(modes)}")

        summary = {"population": len(hands), "metric": metric, "modes": {}}
        for mode in modes:
            scan = ambiguity_scan(
                reference,
                hands,
                model,
                cam,
                mode,
                seed=config.seed,
                margin=config.shift_margin_px,
                workers=config.workers,
            )
            write_records_csv(recorder.output(f"records_{mode}.csv"), scan.records)
            recorder.output(f"scatter_{mode}.svg").write_text(
                scatter_svg(scan.records, metric, config.near_crop_px, config.far_crop_px, title=f"{mode} ({len(scan.records)} hands)"),
                encoding="utf-8",
            )
            if scan.failures:
                write_json(recorder.output(f"failures_{mode}.json"), scan.failure_log())
            separation = separation_check(
                scan.records,
                near=config.near_crop_px,
                far=config.far_crop_px,
                centered_max=config.centered_max_px,
                factor=options['factor'],
                metric=metric,
            )
            summary["modes"][mode] = {
                "records": len(scan.records),
                "failures": len(scan.failures),
                "separation": separation.as_dict(),
            }
            self.stdout.write(
                f"  {mode}: {len(scan.records)} records, {len(scan.failures)} failures, "
                f"near max {separation.near_max:.3f} mm, far max {separation.far_max:.3f} mm"
            )

        write_json(recorder.output("summary.json"), summary)
        recorder.finish()

        if options['check']:
            raw = summary["modes"]["raw"]["separation"]
            if not raw["passed"]:
                raise CheckFailedError(
                    f"Far-crop {metric} max {raw['far_max']:.3f} mm is not {options['factor']:g}x "
                    f"the near-crop max {raw['near_max']:.3f} mm ({raw['far_count']} far, {raw['near_count']} near pairs)."
                )
            self.stdout.write(self.style.SUCCESS(
                f"Check passed: far/near ratio {raw['ratio'] if raw['ratio'] is not None else 'inf'}"
            ))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(recorder.outputs)} files to {recorder.output_dir}"))
