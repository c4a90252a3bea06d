import os
from dataclasses import dataclass, field
from typing import List, Optional

from dotenv import load_dotenv

load_dotenv()

VARIANTS = ('sss', 'rsss', 'ssss')
COUNTERS = ('hll', 'exact')


class InvalidRunConfig(ValueError):
    """Raised when command-line configuration fails validation."""


def parse_topk(text):
    """Parse a comma-separated k list such as "10,100,1000"."""
    try:
        return [int(part) for part in str(text).split(',') if part.strip()]
    except ValueError:
        raise InvalidRunConfig(f"Invalid k list: {text!r}")


class Config:
    # Sketch defaults (s=2000 and r=1024 are the sizes used for the published comparisons)
    VARIANT = os.environ.get('SKETCH_VARIANT', 'ssss')
    SIZE = int(os.environ.get('SKETCH_SIZE', 2000))
    REGISTERS = int(os.environ.get('SKETCH_REGISTERS', 1024))
    COUNTER = os.environ.get('SKETCH_COUNTER', 'hll')  # hll or exact

    # Randomness: generators use the seed directly, hash families derive from it
    SEED = int(os.environ.get('SKETCH_SEED', 0))

    # Evaluation
    TOPK = parse_topk(os.environ.get('SKETCH_TOPK', '10,100,1000'))

    # Input
    DELIMITER = os.environ.get('SKETCH_DELIMITER', ',')

    # Logging
    LOG_LEVEL = os.environ.get('SKETCH_LOG_LEVEL', 'INFO')

    # Generators above this many entries are not desk-scale
    WARN_ENTRIES = int(os.environ.get('SKETCH_WARN_ENTRIES', 10_000_000))


@dataclass
class RunConfig:
    """Everything a CLI command needs, validated before any work starts."""
    variant: str = Config.VARIANT
    size: int = Config.SIZE
    registers: int = Config.REGISTERS
    counter: str = Config.COUNTER
    seed: int = Config.SEED
    topk: List[int] = field(default_factory=lambda: list(Config.TOPK))
    shards: int = 1
    memory_mib: Optional[float] = None
    input_path: Optional[str] = None
    generator: Optional[str] = None
    out: Optional[str] = None

    def validate(self):
        """
        Check every field.

        Returns:
            RunConfig: self, for chaining

        Raises:
            InvalidRunConfig: on the first invalid field
        """
        if self.variant not in VARIANTS:
            raise InvalidRunConfig(f"Unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.counter not in COUNTERS:
            raise InvalidRunConfig(f"Unknown counter {self.counter!r}; expected one of {', '.join(COUNTERS)}")
        if self.size < 1:
            raise InvalidRunConfig(f"Sketch size must be positive, got {self.size}")
        if self.counter == 'hll':
            r = self.registers
            if r < 16 or r > 65536 or r & (r - 1):
                raise InvalidRunConfig(f"Register count must be a power of two in [16, 65536], got {r}")
        if not self.topk or any(k < 1 for k in self.topk):
            raise InvalidRunConfig(f"k list must hold positive integers, got {self.topk}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise InvalidRunConfig(f"Seed must fit in 64 unsigned bits, got {self.seed}")
        if self.shards < 1:
            raise InvalidRunConfig(f"Shard count must be at least 1, got {self.shards}")
        if self.memory_mib is not None and self.memory_mib <= 0:
            raise InvalidRunConfig(f"Memory budget must be positive, got {self.memory_mib}")
        if self.input_path and self.generator:
            raise InvalidRunConfig("Give either an input file or a generator, not both")
        return self
