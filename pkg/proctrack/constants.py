"""Tracker-wide constants, label enums and defaults."""

from __future__ import annotations

from enum import Enum, IntEnum


class AttributeKind(IntEnum):
    NOWHERE = 0
    UNKNOWN = 1
    SPAN = 2


class Action(IntEnum):
    CREATE = 0
    MOVE = 1
    DESTROY = 2
    NONE = 3


class StepTag(str, Enum):
    PREV = "prev"
    CURR = "curr"


class ViolationCategory(str, Enum):
    CREATION = "creation"
    MOVE = "move"
    DESTROY = "destroy"


NUM_ATTRIBUTE_CLASSES = len(AttributeKind)
NUM_ACTIONS = len(Action)

NOWHERE_SYMBOL = "-"
UNKNOWN_SYMBOL = "?"

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
NOWHERE_TOKEN = "[NOWHERE]"
UNKNOWN_TOKEN = "[UNKNOWN]"
RESERVED_CLASS_TOKENS = (NOWHERE_TOKEN, UNKNOWN_TOKEN)

QUERY_TEMPLATE = "where is {entity} ?"
ARTICLES = frozenset({"the", "a", "an"})

# Targets carrying this value are skipped by every cross-entropy term.
IGNORE_INDEX = -100

MAX_SPAN_TOKENS = 10
MIN_SPAN_SCORE = 1e-8
DISTRIBUTION_TOLERANCE = 1e-5

NUM_COOKING_LOCATIONS = 243

DEFAULT_LEARNING_RATE = 3e-5
DEFAULT_BATCH_SIZE = 8
DEFAULT_EPOCHS = 15
DEFAULT_SEED = 13
CLASS_SEQ_HIDDEN = 1000
TRANSITION_SEQ_HIDDEN = 200
PRETRAINED_HIDDEN = 768
DEFAULT_PRETRAINED_NAME = "bert-base-uncased"

PRETRAINED_DIR_ENV = "PROCTRACK_PRETRAINED_DIR"

PROPARA_SPLIT_TEMPLATE = "grids.v1.{split}.tsv"
COOKING_SPLIT_TEMPLATE = "cooking.{split}.jsonl"
COOKING_VOCAB_FILE = "locations.txt"
SPLITS = ("train", "dev", "test")

DATASETS = ("propara", "npn-cooking")
TASKS = ("document-level", "sentence-level", "cooking-location")
