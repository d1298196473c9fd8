"""Category-controlled adversarial text generation."""

from .corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    Batch,
    CorpusError,
    Dataset,
    LabeledSentence,
    Vocabulary,
    build_vocabulary,
    decode,
    encode,
    load_dataset,
    make_batch,
    one_hot,
    sample_batch,
)
from .discriminator import Discriminator, DiscriminatorConfig, DiscriminatorOutput
from .generator import (
    GenerationContext,
    Generator,
    GeneratorConfig,
    TemperatureSchedule,
    gumbel_softmax,
    sample_gumbel,
)
from .training import (
    AdversarialResult,
    LossReport,
    LossWeights,
    TrainingConfig,
    TrainingDiverged,
    adversarial_train,
    adv_loss_d,
    adv_loss_g,
    cls_loss_d,
    cls_loss_g,
    flip_labels,
    load_models,
    mle_loss,
    pretrain_discriminator,
    pretrain_generator,
    sample_context,
    save_train_state,
    total_loss_d,
    total_loss_g,
)
from .evaluation import (
    AugmentationReport,
    BleuConfig,
    ClassifierConfig,
    GeneratorSynthesizer,
    augmentation_eval,
    bleu_n,
    category_fidelity,
    make_eval_contexts,
    nll_div,
    paired_t_test,
    sentence_bleu,
    train_classifier,
)

__version__ = "0.1.0"
