"""Topic-grained multi-vector retrieval: compact document representations
scored by MaxSim, with one embedding per representative topic instead of one
per word."""

from .corpus import (
    CorpusLimits,
    Judgments,
    TextKind,
    TokenSeq,
    TrainingSet,
    Triple,
    Vocab,
    build_vocab,
    ingest,
    serialize,
    tokenize,
)
from .encoder import (
    Encoder,
    EncoderParams,
    Granularity,
    Representation,
    attention_pool,
    bucket_by_topic,
    encode_contextual,
    init_encoder_params,
    load_params,
    project,
    save_params,
)
from .index import (
    QuantScheme,
    RepresentationIndex,
    SpaceStats,
    build_index,
    dequantize,
    quantize,
    space_report,
)
from .retrieval import (
    Metrics,
    RankedList,
    evaluate,
    maxsim,
    read_run,
    search,
    tradeoff,
    write_run,
)
from .topics import (
    LdaConfig,
    LdaModel,
    TopicAssignmentTable,
    TopicExtractionConfig,
    extract_word_topics,
    fit_lda,
    infer_doc_topics,
    load_lda,
    save_lda,
)
from .trainer import (
    Checkpoint,
    TrainConfig,
    backward,
    gradient_check,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
