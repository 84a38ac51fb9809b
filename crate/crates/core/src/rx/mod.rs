//! Receiver: zoom spectral analysis, fall detection, subset-chain decoding.

pub mod czt;
pub mod decode;
pub mod spectrogram;
pub mod transitions;

pub use czt::{czt, Czt, CztMethod};
pub use decode::{
    decode_period, demultiplex, reconstruct, segment_periods, DecodeOptions, DecodeResult, PeriodChain,
    PeriodStatus,
};
pub use spectrogram::{sliding_spectrogram, CztPlan, Taper, ZoomSpectrogram};
pub use transitions::find_decrease_points;
