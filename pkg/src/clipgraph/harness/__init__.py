from .corpus import (
    Corpus,
    CorpusError,
    CorpusIndex,
    SyntheticCorpusSpec,
    VideoFixture,
    generate_corpus,
    load_corpus,
    load_video_fixture,
    write_corpus,
)
from .evaluate import (
    MODES,
    AmortizationError,
    AmortizationReport,
    EvalReport,
    QuestionResult,
    SweepCheckError,
    amortization_check,
    build_or_load,
    run_eval,
    sweep,
)

__all__ = [
    "AmortizationError",
    "AmortizationReport",
    "Corpus",
    "CorpusError",
    "CorpusIndex",
    "EvalReport",
    "MODES",
    "QuestionResult",
    "SweepCheckError",
    "SyntheticCorpusSpec",
    "VideoFixture",
    "amortization_check",
    "build_or_load",
    "generate_corpus",
    "load_corpus",
    "load_video_fixture",
    "run_eval",
    "sweep",
    "write_corpus",
]
