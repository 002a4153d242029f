# anchorcast/studio_app/management/commands/eval.py
import os
from anchorcast_core.evaluation import evaluate_run, ToyProjectionExtractor, REPORT_FILE
from ._base import AnchorcastCommand


class Command(AnchorcastCommand):
    help = "Scores generated frames against ground truth: SSIM, PSNR, Frechet feature distance."
    command_name = 'eval'
    config_options = {'n_jobs': 'n_jobs'}

    def add_command_arguments(self, parser):
        parser.add_argument('--generated', required=True, help="Directory of numbered generated frames.")
        parser.add_argument('--reference', required=True, help="Directory of numbered ground-truth frames.")
        parser.add_argument('--masks', help="Optional foreground masks; background is zeroed in both streams.")
        parser.add_argument('--n-jobs', type=int, default=None)

    def run(self, config, out_dir, options):
        report = evaluate_run(options['generated'], options['reference'], options.get('masks'),
                              extractor=ToyProjectionExtractor(seed=config.seed), output_dir=out_dir,
                              n_jobs=config.n_jobs)
        return self.write_run_record(
            out_dir, config,
            outputs={'summary': repr(report), 'report': os.path.abspath(os.path.join(out_dir, REPORT_FILE)),
                     'ssim_mean': report.ssim_mean, 'psnr_mean': report.psnr_mean, 'frechet': report.frechet},
            inputs={k: os.path.abspath(options[k]) if options.get(k) else None
                    for k in ('generated', 'reference', 'masks')})
