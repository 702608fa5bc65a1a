//! C interface to the MSS frequency oracle.
//!
//! Every function returns an [`MssStatus`]; on failure a message is kept for
//! the calling thread and can be read with [`mss_last_error`]. Handles are
//! opaque, owned by the caller and released with the matching `_free`
//! function. A handle must not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mss::attacks::dra_mss_exact;
use mss::decoder::{comm_cost_bits, decode, BlockCounts};
use mss::domain::{ModuliSet, MssReport};
use mss::error::MssError;
use mss::mechanisms::{Mss, SubsetSampler};
use mss::moduli::{choose_moduli, planning_kappa, ModuliSearchConfig};
use mss::rng::{stream, StreamRng};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MssStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidModuli = 2,
    SearchExhausted = 3,
    NoData = 4,
    MalformedReport = 5,
    DimensionMismatch = 6,
    RankDeficient = 7,
    Capacity = 8,
    Io = 9,
    NullPointer = 10,
    BufferTooSmall = 11,
    Internal = 12,
}

/// A validated moduli tuple with its domain size and privacy budget.
pub struct MssModuli {
    set: ModuliSet,
}

/// Client-side randomizer with its own random stream.
pub struct MssEncoder {
    mech: Mss,
    rng: StreamRng,
    sampler: SubsetSampler,
    z: Vec<u32>,
}

/// Server-side report counts.
pub struct MssAggregator {
    set: ModuliSet,
    counts: BlockCounts,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &MssError) -> MssStatus {
    match e {
        MssError::InvalidArgument(_) | MssError::UndefinedBound(_) => MssStatus::InvalidArgument,
        MssError::InvalidModuli(_) => MssStatus::InvalidModuli,
        MssError::SearchExhausted { .. } => MssStatus::SearchExhausted,
        MssError::NoData => MssStatus::NoData,
        MssError::MalformedReport(_) => MssStatus::MalformedReport,
        MssError::DimensionMismatch { .. } => MssStatus::DimensionMismatch,
        MssError::RankDeficient => MssStatus::RankDeficient,
        MssError::Capacity { .. } => MssStatus::Capacity,
        MssError::Io(_) | MssError::Json(_) | MssError::Csv(_) => MssStatus::Io,
    }
}

/// Runs `f`, recording errors and containing panics.
fn guard<F: FnOnce() -> Result<(), (MssStatus, String)>>(f: F) -> MssStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MssStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MssStatus::Internal
        }
    }
}

fn lib<T>(r: mss::error::Result<T>) -> Result<T, (MssStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MssStatus, String) {
    (MssStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (MssStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (MssStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies the calling thread's last error message (NUL-terminated,
/// truncated to `cap`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn mss_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Validates `moduli[0..ell]` for domain size `k` and budget `eps`.
///
/// # Safety
/// `moduli` must be valid for `ell` reads; `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_new(
    moduli: *const usize,
    ell: usize,
    k: usize,
    eps: f64,
    out_handle: *mut *mut MssModuli,
) -> MssStatus {
    guard(|| {
        let dst = out(out_handle, "out_handle")?;
        let m = slice(moduli, ell, "moduli")?.to_vec();
        let set = lib(ModuliSet::new(m, k, eps))?;
        *dst = Box::into_raw(Box::new(MssModuli { set }));
        Ok(())
    })
}

/// Searches for moduli with the default configuration and the given seed.
///
/// # Safety
/// `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_choose(k: usize, eps: f64, seed: u64, out_handle: *mut *mut MssModuli) -> MssStatus {
    guard(|| {
        let dst = out(out_handle, "out_handle")?;
        let cfg = ModuliSearchConfig { seed, ..ModuliSearchConfig::default() };
        let choice = lib(choose_moduli(k, eps, &cfg))?;
        *dst = Box::into_raw(Box::new(MssModuli { set: choice.moduli }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from `mss_moduli_new`/`mss_moduli_choose`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_free(h: *mut MssModuli) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of moduli.
///
/// # Safety
/// `h` must be a live handle; `ell` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_len(h: *const MssModuli, ell: *mut usize) -> MssStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        *out(ell, "ell")? = h.set.ell();
        Ok(())
    })
}

/// Copies the moduli into `buf`, which must hold `mss_moduli_len` entries.
///
/// # Safety
/// `h` must be a live handle; `buf` must be valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_get(h: *const MssModuli, buf: *mut usize, cap: usize) -> MssStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        let m = h.set.moduli();
        if cap < m.len() {
            return Err((MssStatus::BufferTooSmall, format!("need {} entries, have {cap}", m.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(m.as_ptr(), buf, m.len());
        Ok(())
    })
}

/// Condition number of the weighted design under equal block counts.
///
/// # Safety
/// `h` must be a live handle; `kappa` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_kappa(h: *const MssModuli, kappa: *mut f64) -> MssStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        *out(kappa, "kappa")? = planning_kappa(&h.set, f64::INFINITY);
        Ok(())
    })
}

/// Average bits per report.
///
/// # Safety
/// `h` must be a live handle; `bits` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_bits(h: *const MssModuli, bits: *mut f64) -> MssStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        *out(bits, "bits")? = comm_cost_bits(&h.set);
        Ok(())
    })
}

/// Expected single-report reconstruction rate for a uniform input.
///
/// # Safety
/// `h` must be a live handle; `rate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_moduli_dra(h: *const MssModuli, rate: *mut f64) -> MssStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("handle"))?;
        *out(rate, "rate")? = dra_mss_exact(&h.set);
        Ok(())
    })
}

/// Creates a randomizer for the moduli in `h` (copied) seeded with `seed`.
///
/// # Safety
/// `h` must be a live handle; `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_encoder_new(h: *const MssModuli, seed: u64, out_handle: *mut *mut MssEncoder) -> MssStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("moduli"))?;
        let dst = out(out_handle, "out_handle")?;
        let enc = MssEncoder {
            mech: Mss::new(h.set.clone()),
            rng: stream(seed, &[]),
            sampler: SubsetSampler::new(),
            z: Vec::new(),
        };
        *dst = Box::into_raw(Box::new(enc));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live encoder handle.
#[no_mangle]
pub unsafe extern "C" fn mss_encoder_free(h: *mut MssEncoder) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Perturbs `x`. Writes the block index to `j` and the sorted subset to
/// `z[0..*z_len]`; `z_cap` must be at least the largest block's subset size.
///
/// # Safety
/// `h` must be a live encoder; `j` and `z_len` writable; `z` valid for
/// `z_cap` writes.
#[no_mangle]
pub unsafe extern "C" fn mss_encoder_perturb(
    h: *mut MssEncoder,
    x: usize,
    j: *mut usize,
    z: *mut u32,
    z_cap: usize,
    z_len: *mut usize,
) -> MssStatus {
    guard(|| {
        let enc = h.as_mut().ok_or_else(|| null("encoder"))?;
        let (j, z_len) = (out(j, "j")?, out(z_len, "z_len")?);
        let k = enc.mech.k();
        if x >= k {
            return Err((MssStatus::InvalidArgument, format!("value {x} outside [0, {k})")));
        }
        let need = enc.mech.moduli.blocks().iter().map(|b| b.omega).max().unwrap_or(0);
        if z_cap < need {
            return Err((MssStatus::BufferTooSmall, format!("need {need} entries, have {z_cap}")));
        }
        if z.is_null() {
            return Err(null("z"));
        }
        let MssEncoder { mech, rng, sampler, z: buf } = enc;
        *j = mech.perturb_into(x, rng, sampler, buf);
        ptr::copy_nonoverlapping(buf.as_ptr(), z, buf.len());
        *z_len = buf.len();
        Ok(())
    })
}

/// Creates an empty aggregator for the moduli in `h` (copied).
///
/// # Safety
/// `h` must be a live handle; `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_aggregator_new(h: *const MssModuli, out_handle: *mut *mut MssAggregator) -> MssStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("moduli"))?;
        let dst = out(out_handle, "out_handle")?;
        let agg = MssAggregator { set: h.set.clone(), counts: BlockCounts::new(&h.set) };
        *dst = Box::into_raw(Box::new(agg));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a live aggregator handle.
#[no_mangle]
pub unsafe extern "C" fn mss_aggregator_free(h: *mut MssAggregator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Validates and counts one report.
///
/// # Safety
/// `h` must be a live aggregator; `z` valid for `z_len` reads.
#[no_mangle]
pub unsafe extern "C" fn mss_aggregator_add(h: *mut MssAggregator, j: usize, z: *const u32, z_len: usize) -> MssStatus {
    guard(|| {
        let agg = h.as_mut().ok_or_else(|| null("aggregator"))?;
        let report = MssReport { j, z: slice(z, z_len, "z")?.to_vec() };
        lib(agg.counts.add(&report, &agg.set))
    })
}

/// Number of reports counted so far.
///
/// # Safety
/// `h` must be a live aggregator; `n` writable.
#[no_mangle]
pub unsafe extern "C" fn mss_aggregator_count(h: *const MssAggregator, n: *mut u64) -> MssStatus {
    guard(|| {
        let agg = h.as_ref().ok_or_else(|| null("aggregator"))?;
        *out(n, "n")? = agg.counts.total();
        Ok(())
    })
}

/// Estimates the histogram into `f[0..k]`. `lambda < 0` selects `1/ε²`.
///
/// # Safety
/// `h` must be a live aggregator; `f` valid for `k` writes.
#[no_mangle]
pub unsafe extern "C" fn mss_aggregator_decode(h: *const MssAggregator, lambda: f64, f: *mut f64, k: usize) -> MssStatus {
    guard(|| {
        let agg = h.as_ref().ok_or_else(|| null("aggregator"))?;
        if k != agg.set.k() {
            return Err((
                MssStatus::DimensionMismatch,
                format!("output holds {k} entries, domain has {}", agg.set.k()),
            ));
        }
        if f.is_null() {
            return Err(null("f"));
        }
        if lambda.is_nan() {
            return Err((MssStatus::InvalidArgument, "lambda is NaN".into()));
        }
        let lambda = if lambda < 0.0 { mss::decoder::default_lambda(agg.set.eps()) } else { lambda };
        let est = lib(decode(&agg.counts, &agg.set, lambda))?;
        ptr::copy_nonoverlapping(est.histogram.as_slice().as_ptr(), f, k);
        Ok(())
    })
}
