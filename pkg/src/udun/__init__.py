"""Unite-Divide-Unite dichotomous image segmentation.

!!! abstract "Usage"

    Describe the network with a [`ModelConfig`][.] and the optimization recipe
    with a [`TrainConfig`][.] (or load both from a `key = value` file with
    [`load_config`][.]); then

    - build a [`UDUN`][udun.model.] model, or run [`train`][udun.train.train]
      on a dataset directory;
    - predict with [`infer`][udun.infer.infer];
    - score predictions with [`udun.metrics`][udun.metrics].

    The same operations are exposed on the command line as `udun <command>`;
    see [`udun.cli`][udun.cli].
"""

from beartype.claw import beartype_this_package

beartype_this_package()

# ruff: noqa: E402
from jaxtyping import install_import_hook

with install_import_hook(["udun.labels", "udun.losses"], "beartype.beartype"):
    from . import labels, losses

from . import data, metrics, model

with install_import_hook(["udun.train", "udun.infer"], "beartype.beartype"):
    from . import infer, train

from .config import ModelConfig, TrainConfig, load_config, save_config
from .constraints import Constraint, ConstraintCheck, check_config

__all__ = [
    "data", "infer", "labels", "losses", "metrics", "model", "train",
    "ModelConfig", "TrainConfig", "load_config", "save_config",
    "Constraint", "ConstraintCheck", "check_config",
]
