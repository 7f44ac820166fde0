from .network import (
    GanModel as GanModel,
    coordconv_concat as coordconv_concat,
    network_input as network_input,
    feature_extract as feature_extract,
    generator_forward as generator_forward,
    discriminator_forward as discriminator_forward,
)
from .losses import (
    loss_generator as loss_generator,
    loss_discriminator as loss_discriminator,
)
from .augment import augment_longitudinal_shift as augment_longitudinal_shift
from .store import (
    ParameterStore as ParameterStore,
    save_checkpoint as save_checkpoint,
    load_checkpoint as load_checkpoint,
)
from .trainer import train as train, TrainResult as TrainResult, EpochLog as EpochLog
from .generate import generate as generate, load_model as load_model
from .synthetic import make_blob_dataset as make_blob_dataset
