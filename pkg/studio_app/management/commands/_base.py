# anchorcast/studio_app/management/commands/_base.py
"""
Shared plumbing for the anchorcast management commands.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""
import os
import sys
import time
from django.core.management.base import BaseCommand, CommandError
from anchorcast_core.exceptions import AnchorcastError, InputValidationError
from anchorcast_core.run_config import parse_config
from anchorcast_core.utils import output_dir, sha256_file, write_json_atomic

RUN_RECORD_FILE = 'run_record.json'
USAGE_ERROR, RUNTIME_ERROR = 1, 2


class AnchorcastCommand(BaseCommand):
    command_name = ''
    # argparse dest -> RunConfig key, for flags that override config values.
    config_options = {}

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # Bad arguments raise CommandError (exit 1) instead of argparse's exit 2.
        parser.called_from_command_line = False
        return parser

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as e:
            self.stderr.write(f"CommandError: {e}")
            sys.exit(e.returncode)

    def add_arguments(self, parser):
        parser.add_argument('--config', help="Run config file (dotenv syntax, see run_config.example.env).")
        parser.add_argument('--output-dir', help="Where outputs go; defaults to $ANCHORCAST_OUTPUT_DIR/<command>.")
        parser.add_argument('--seed', type=int, default=None)
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        try:
            config = parse_config(options.get('config'), self._flags(options))
            out_dir = options.get('output_dir') or config.output_dir or os.path.join(output_dir(), self.command_name)
            os.makedirs(out_dir, exist_ok=True)
            print(f"[{time.ctime()}] COMMAND: {self.command_name} writing to {out_dir}.")
            record = self.run(config, out_dir, options)
        except InputValidationError as e:
            raise CommandError(str(e), returncode=USAGE_ERROR) from e
        except (AnchorcastError, OSError) as e:
            raise CommandError(f"{type(e).__name__}: {e}", returncode=RUNTIME_ERROR) from e
        self.stdout.write(self.style.SUCCESS(f"{self.command_name} finished: {record['outputs']['summary']}"))

    def _flags(self, options):
        flags = {key: options.get(dest) for dest, key in self.config_options.items()}
        flags['seed'] = options.get('seed')
        return flags

    def run(self, config, out_dir, options):
        raise NotImplementedError

    def write_run_record(self, out_dir, config, outputs, checkpoint=None, inputs=None):
        record = {
            'command': self.command_name,
            'config': config.as_dict(),
            'config_file': config.source_path,
            'seed': config.seed,
            'checkpoint': None if checkpoint is None else {'path': os.path.abspath(checkpoint),
                                                           'sha256': sha256_file(checkpoint)},
            'inputs': inputs or {},
            'outputs': outputs,
        }
        write_json_atomic(os.path.join(out_dir, RUN_RECORD_FILE), record)
        return record
