import logging
import os

OUTPUT_DELIMITER = ','
ECHO_FILE = 'run-config.echo'
VERSION_FILE = 'VERSION'


def make_symlink(src: str, dst: str) -> None:
    """Create a symlink from src to dst. Remove dst first if it
    exists."""
    if os.path.lexists(dst):
        os.remove(dst)
    os.symlink(src, dst)


def ensure_dir(path: str) -> str:
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def write_csv(lines: list, output: str) -> None:
    """Write rows (header first) joined by OUTPUT_DELIMITER."""
    logging.info(f'Writing {len(lines)} lines to file: {output}')
    ensure_dir(os.path.dirname(output))
    with open(output, 'w') as f:
        for line in lines:
            f.write(OUTPUT_DELIMITER.join(map(format_cell, line)) + '\n')


def format_cell(value) -> str:
    if isinstance(value, float):
        if value != value:
            return 'nan'
        return repr(value)
    return str(value)


def read_csv(input_: str) -> list:
    logging.info(f'Reading file: {input_}')
    with open(input_, 'r') as f:
        return [line.rstrip('\n').split(OUTPUT_DELIMITER) for line in f]


def write_run_stamp(output_dir: str, config_text: str, version: str) -> None:
    """Echo the resolved run config and the package version into an
    output directory."""
    ensure_dir(output_dir)
    with open(os.path.join(output_dir, ECHO_FILE), 'w') as f:
        f.write(config_text)
    with open(os.path.join(output_dir, VERSION_FILE), 'w') as f:
        f.write(version + '\n')
