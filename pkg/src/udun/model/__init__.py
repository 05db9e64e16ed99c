"""Unite-Divide-Unite network.

| Part | Module | Role |
|------|--------|------|
| [`UnionEncoder`][.] | `encoder` | Dual-size backbone passes, channel reduction, `HR0`, DCM routing |
| [`TrunkDecoder`][.] | `decoders` | Dense cascade fusion of the trunk group |
| [`StructureDecoder`][.] | `decoders` | Trunk-filtered fusion of the structure group |
| [`UnionDecoder`][.] | `decoders` | Trunk/mask-structure aggregation and the mask head |
| [`UDUN`][.] | `udun` | All of the above |

!!! warning

    All inputs are square; `hr_size` must be `4 × lr_size`, and both must be
    divisible by 32.
"""

from jaxtyping import install_import_hook

with install_import_hook("udun.model", "beartype.beartype"):
    from .backbone import Backbone, build_backbone, load_backbone_weights
    from .blocks import (
        AddAggregation,
        Aggregation,
        CascadeChain,
        CascadeFuse,
        ConcatAggregation,
        ConvBN,
        ConvBNReLU,
        Reduction,
        SumFusion,
    )
    from .decoders import (
        StructureDecoder,
        StructureDecoderOutput,
        StructureFilter,
        TrunkDecoder,
        TrunkDecoderOutput,
        UnionDecoder,
    )
    from .encoder import (
        ChannelReduction,
        EncoderOutput,
        HR0Path,
        UnionEncoder,
        dcm_regroup,
        reduce_channels,
        routing,
    )
    from .summary import count_flops, count_params, param_breakdown
    from .udun import UDUN, ModelOutput, model_forward

__all__ = [
    "Backbone", "build_backbone", "load_backbone_weights",
    "AddAggregation", "Aggregation", "CascadeChain", "CascadeFuse",
    "ConcatAggregation", "ConvBN", "ConvBNReLU", "Reduction", "SumFusion",
    "StructureDecoder", "StructureDecoderOutput", "StructureFilter",
    "TrunkDecoder", "TrunkDecoderOutput", "UnionDecoder",
    "ChannelReduction", "EncoderOutput", "HR0Path", "UnionEncoder",
    "dcm_regroup", "reduce_channels", "routing",
    "count_flops", "count_params", "param_breakdown",
    "UDUN", "ModelOutput", "model_forward",
]
