import bz2
import logging
import os

import msgpack

from wavecast.errors import FormatError


class MsgpackFileHandler:
    """bz2-compressed msgpack blob holding one plain dict."""

    def __init__(self, input_: str = None, output: str = None):
        self.input = input_
        self.output = output or input_

    def read(self) -> dict:
        logging.info(f'Reading file: {self.input}')
        try:
            with bz2.open(self.input, 'rb') as f:
                return msgpack.unpackb(f.read(), raw=False, strict_map_key=False)
        except OSError as e:
            raise FormatError(f'Failed to read {self.input}: {e}') from None
        except (ValueError, msgpack.UnpackException) as e:
            raise FormatError(f'Corrupt msgpack payload in {self.input}: {e}') from None

    def write(self, data: dict) -> None:
        logging.info(f'Writing {len(data)} keys to file: {self.output}')
        if os.path.dirname(self.output):
            os.makedirs(os.path.dirname(self.output), exist_ok=True)
        payload = msgpack.packb(data, use_bin_type=True)
        with open(self.output, 'wb') as raw:
            raw.write(bz2.compress(payload))
