from .dataset import (
    CLASS_NAMES,
    SYMBOL_TO_CLASS,
    BeatDataset,
    balance_and_split,
    read_beats,
    segment_beats,
    write_beats,
)
from .wfdb import (
    Record,
    decode_212,
    encode_212,
    parse_header,
    read_annotations,
    read_record,
    write_annotations,
    write_record,
)

__all__ = [
    "CLASS_NAMES",
    "SYMBOL_TO_CLASS",
    "BeatDataset",
    "Record",
    "balance_and_split",
    "decode_212",
    "encode_212",
    "parse_header",
    "read_annotations",
    "read_beats",
    "read_record",
    "segment_beats",
    "write_annotations",
    "write_beats",
    "write_record",
]
