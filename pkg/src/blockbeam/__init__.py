"""Block-online multichannel speech enhancement.

Beamforming (inverse-RTF, MVDR, max-SNR) steered by VAD-weighted relative
transfer function estimates, with Wiener/BAN post-filtering, applied
independently per block. Includes a mixture simulator and projection-based
SIR/SDR/SAR metrics for verification.
"""

from .audio_io import MultichannelSignal, NetworkWeights, load_network, read_wav, write_wav
from .beamform import (
    BeamWeights,
    CovarianceSet,
    apply_weights,
    estimate_noise,
    gev_weights,
    irtf_weights,
    mvdr_weights,
)
from .channel_health import ChannelReport, detect_failures
from .errors import (
    BlockbeamError,
    ConfigError,
    DataError,
    FormatError,
    SizeError,
    UnsupportedEncodingError,
)
from .evalsim import MetricReport, MixtureSpec, decompose, metrics, simulate
from .pipeline import (
    BlockResult,
    OracleStems,
    PipelineConfig,
    process_block,
    run,
    run_with_diagnostics,
)
from .postfilter import PostfilterConfig, apply_postfilter, residual_noise, wiener_mask
from .rtf import RtfSet, SubblockPsd, build_rtf_set, compute_subblock_psd, estimate_rtf_inverse
from .stft import Spectrogram, StftConfig, analyze, synthesize
from .vad import Mask, infer_mask, oracle_ibm, pool_median, unit_mask

__version__ = "0.1.0"
