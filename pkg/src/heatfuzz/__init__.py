"""heatfuzz: reward-directed, attention-guided greybox fuzzing of toy targets."""

__version__ = "0.1.0"
