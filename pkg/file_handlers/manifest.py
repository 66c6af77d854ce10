"""Plain-text dataset index, one record per line:

    <iso-time> <variable>[@<lead>] <relative-path>

Static fields use the time token ``static``.
"""
import logging
import os
from collections import namedtuple
from datetime import datetime, timezone
from typing import List

from wavecast.errors import FormatError

TIME_FMT = '%Y-%m-%dT%H:%M:%SZ'
STATIC_TOKEN = 'static'
LEAD_SEPARATOR = '@'
FIELD_COUNT = 3

ManifestRecord = namedtuple('ManifestRecord', 'time variable lead path')


def format_time(seconds: int) -> str:
    if seconds < 0:
        return STATIC_TOKEN
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime(TIME_FMT)


def parse_time(text: str) -> int:
    if text == STATIC_TOKEN:
        return -1
    try:
        parsed = datetime.strptime(text, TIME_FMT)
    except ValueError:
        raise FormatError(f'Invalid time {text!r} (expected {TIME_FMT})') from None
    return int(parsed.replace(tzinfo=timezone.utc).timestamp())


def parse_record(line: str) -> ManifestRecord:
    line_split = line.split()
    if len(line_split) != FIELD_COUNT:
        raise FormatError(f'Malformed manifest line: {line.strip()}')
    time, variable, path = line_split
    lead = None
    if LEAD_SEPARATOR in variable:
        variable, lead_text = variable.split(LEAD_SEPARATOR, 1)
        if not lead_text.isdigit():
            raise FormatError(f'Invalid lead in manifest line: {line.strip()}')
        lead = int(lead_text)
    return ManifestRecord(parse_time(time), variable.upper(), lead, path)


def render_record(record: ManifestRecord) -> str:
    variable = record.variable
    if record.lead is not None:
        variable += f'{LEAD_SEPARATOR}{record.lead}'
    return f'{format_time(record.time)} {variable} {record.path}'


class ManifestFileHandler:
    def __init__(self, input_: str = None, output: str = None):
        self.input = input_
        self.output = output or input_

    @property
    def base_dir(self) -> str:
        return os.path.dirname(os.path.abspath(self.input or self.output))

    def resolve(self, record: ManifestRecord) -> str:
        return os.path.join(self.base_dir, record.path)

    def read(self) -> List[ManifestRecord]:
        logging.info(f'Reading file: {self.input}')
        try:
            with open(self.input, 'r') as f:
                lines = [line for line in f if line.strip() and not line.startswith('#')]
        except OSError as e:
            raise FormatError(f'Failed to read manifest {self.input}: {e}') from None
        return [parse_record(line) for line in lines]

    def write(self, records: List[ManifestRecord]) -> None:
        logging.info(f'Writing {len(records)} lines to file: {self.output}')
        if os.path.dirname(self.output):
            os.makedirs(os.path.dirname(self.output), exist_ok=True)
        with open(self.output, 'w') as f:
            for record in records:
                f.write(render_record(record) + '\n')
