//! C ABI over the multiband library.
//!
//! Objects are opaque heap handles created by `mb_*_new`/`mb_*_design` and
//! released by the matching `mb_*_free`. Every fallible call returns an
//! [`MbStatus`]; the message of the last failure on the calling thread is
//! available from [`mb_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use multiband::band_model::{Band, IndexSets, MultibandSupport};
use multiband::reconstructor::{BoundTarget, ErrorBudget, Reconstructor};
use multiband::smrs_design::{build_scheme, SmrsScheme};
use multiband::window::WindowSpec;
use multiband::Error;
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbStatus {
    Ok = 0,
    Invalid = 1,
    RankDeficient = 2,
    Overflow = 3,
    OutsideInterval = 4,
    EmptySupport = 5,
    NullPointer = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Io = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MbComplex {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for MbComplex {
    fn from(z: Complex64) -> Self {
        MbComplex { re: z.re, im: z.im }
    }
}

impl From<MbComplex> for Complex64 {
    fn from(z: MbComplex) -> Self {
        Complex64::new(z.re, z.im)
    }
}

/// Sample instant T·(n + q/Q_k).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MbGridKey {
    pub n: i64,
    pub k: u32,
    pub q: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MbWindowParams {
    pub bw: f64,
    pub period: f64,
    pub t1: f64,
    pub delta: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub delta_w: f64,
    pub c: f64,
}

pub struct MbWindow(WindowSpec);
pub struct MbScheme(SmrsScheme);
pub struct MbSupport(MultibandSupport);
pub struct MbReconstructor(Reconstructor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MbStatus {
    match e {
        Error::RankDeficient { .. } => MbStatus::RankDeficient,
        Error::Overflow(_) => MbStatus::Overflow,
        Error::OutsideInterval { .. } => MbStatus::OutsideInterval,
        Error::EmptySupport => MbStatus::EmptySupport,
        Error::Io(_) => MbStatus::Io,
        _ => MbStatus::Invalid,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
    Short { needed: usize, got: usize },
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MbStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            MbStatus::NullPointer
        }
        Ok(Err(Fail::Short { needed, got })) => {
            set_error(format!("buffer holds {got} elements, {needed} needed"));
            MbStatus::BufferTooSmall
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MbStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, needed: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len < needed {
        return Err(Fail::Short { needed, got: len });
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn target(component: i64) -> BoundTarget {
    if component < 0 {
        BoundTarget::Total
    } else {
        BoundTarget::Component(component as usize)
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Designs a window. A `delta` ≤ 0 selects the fitted optimum.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_window_design(bw: f64, period: f64, t1: f64, delta: f64, out: *mut *mut MbWindow) -> MbStatus {
    guard(|| {
        let w = if delta > 0.0 {
            WindowSpec::with_delta(bw, period, t1, delta)?
        } else {
            WindowSpec::design(bw, period, t1)?
        };
        put(out, MbWindow(w))
    })
}

/// # Safety
/// `w` must be a live window handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_window_params(w: *const MbWindow, out: *mut MbWindowParams) -> MbStatus {
    guard(|| {
        let w = &get(w, "window")?.0;
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = MbWindowParams {
            bw: w.bw,
            period: w.period,
            t1: w.t1,
            delta: w.delta,
            rho: w.rho,
            epsilon: w.epsilon,
            delta_w: w.delta_w,
            c: w.c,
        };
        Ok(())
    })
}

/// w(t); NaN for a null handle.
///
/// # Safety
/// `w` must be null or a live window handle.
#[no_mangle]
pub unsafe extern "C" fn mb_window_eval(w: *const MbWindow, t: f64) -> f64 {
    w.as_ref().map_or(f64::NAN, |w| w.0.eval(t))
}

/// # Safety
/// `w` must be a live window handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_window_tail_bound(w: *const MbWindow, t: f64, out: *mut f64) -> MbStatus {
    guard(|| {
        let v = get(w, "window")?.0.tail_bound(t)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// `w` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn mb_window_free(w: *mut MbWindow) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// # Safety
/// `moduli` must point to `len` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_scheme_new(moduli: *const u32, len: usize, t0: f64, period: f64, out: *mut *mut MbScheme) -> MbStatus {
    guard(|| {
        let m = slice(moduli, len, "moduli")?;
        put(out, MbScheme(build_scheme(m, t0, period)?))
    })
}

/// Number of distinct sample instants per period; 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live scheme handle.
#[no_mangle]
pub unsafe extern "C" fn mb_scheme_instant_count(s: *const MbScheme) -> usize {
    s.as_ref().map_or(0, |s| s.0.instants().len())
}

/// Instants as reduced fractions num/den of T, in increasing order.
///
/// # Safety
/// `num` and `den` must each hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn mb_scheme_instants(s: *const MbScheme, num: *mut u64, den: *mut u64, cap: usize) -> MbStatus {
    guard(|| {
        let inst = get(s, "scheme")?.0.instants();
        let num = slice_mut(num, cap, inst.len(), "num")?;
        let den = slice_mut(den, cap, inst.len(), "den")?;
        for (i, f) in inst.iter().enumerate() {
            num[i] = f.num;
            den[i] = f.den;
        }
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn mb_scheme_free(s: *mut MbScheme) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Bands given by center and width, all of length `n`.
///
/// # Safety
/// `fc` and `width` must point to `n` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_support_new(
    fc: *const f64,
    width: *const f64,
    n: usize,
    period: f64,
    window_bw: f64,
    out: *mut *mut MbSupport,
) -> MbStatus {
    guard(|| {
        let fc = slice(fc, n, "fc")?;
        let width = slice(width, n, "width")?;
        let bands = fc.iter().zip(width).map(|(&f, &b)| Band::centered(f, b)).collect::<Result<Vec<_>, _>>()?;
        put(out, MbSupport(MultibandSupport::new(bands, period, window_bw)?))
    })
}

/// Size of the union index set I_zw; 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live support handle.
#[no_mangle]
pub unsafe extern "C" fn mb_support_union_len(s: *const MbSupport) -> usize {
    s.as_ref().map_or(0, |s| s.0.expanded_index_sets().union.len())
}

/// First and last index of component m's expanded index set.
///
/// # Safety
/// `s` must be a live support handle; `lo` and `hi` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_support_range(s: *const MbSupport, m: usize, lo: *mut i64, hi: *mut i64) -> MbStatus {
    guard(|| {
        let sets: IndexSets = get(s, "support")?.0.expanded_index_sets();
        let set = sets
            .per_component
            .get(m)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Fail::Lib(Error::Invalid(format!("component {m} does not exist"))))?;
        *lo.as_mut().ok_or(Fail::Null("lo"))? = set[0];
        *hi.as_mut().ok_or(Fail::Null("hi"))? = set[set.len() - 1];
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn mb_support_free(s: *mut MbSupport) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Copies the three inputs; the caller keeps ownership of its handles.
///
/// # Safety
/// Inputs must be live handles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_reconstructor_new(
    scheme: *const MbScheme,
    support: *const MbSupport,
    window: *const MbWindow,
    out: *mut *mut MbReconstructor,
) -> MbStatus {
    guard(|| {
        let scheme = get(scheme, "scheme")?.0.clone();
        let sets = get(support, "support")?.0.expanded_index_sets();
        let window = get(window, "window")?.0;
        put(out, MbReconstructor(Reconstructor::new(scheme, sets, window)?))
    })
}

/// Samples needed per block; 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live reconstructor handle.
#[no_mangle]
pub unsafe extern "C" fn mb_reconstructor_block_len(r: *const MbReconstructor) -> usize {
    r.as_ref().map_or(0, |r| r.0.scheme().instants().len())
}

/// Grid keys and offsets from τ of the samples needed by the block at τ.
///
/// # Safety
/// `keys` and `offsets` must each hold `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn mb_reconstructor_plan(
    r: *const MbReconstructor,
    tau: f64,
    keys: *mut MbGridKey,
    offsets: *mut f64,
    cap: usize,
) -> MbStatus {
    guard(|| {
        let plan = get(r, "reconstructor")?.0.plan(tau);
        let n = plan.points.len();
        let keys = slice_mut(keys, cap, n, "keys")?;
        let offsets = slice_mut(offsets, cap, n, "offsets")?;
        for (i, pt) in plan.points.iter().enumerate() {
            keys[i] = MbGridKey { n: pt.key.n, k: pt.key.k as u32, q: pt.key.q };
            offsets[i] = pt.offset;
        }
        Ok(())
    })
}

/// Reconstructs the block at τ from samples given in plan order and writes
/// the signal (`component` < 0) or one component at `n_out` offsets from τ.
///
/// # Safety
/// `samples` must hold `n_samples` values; `t` and `out` `n_out` each.
#[no_mangle]
pub unsafe extern "C" fn mb_reconstructor_block(
    r: *const MbReconstructor,
    tau: f64,
    samples: *const MbComplex,
    n_samples: usize,
    t: *const f64,
    n_out: usize,
    component: i64,
    out: *mut MbComplex,
) -> MbStatus {
    guard(|| {
        let r = &get(r, "reconstructor")?.0;
        let samples: Vec<Complex64> = slice(samples, n_samples, "samples")?.iter().map(|&z| z.into()).collect();
        let t = slice(t, n_out, "t")?;
        let out = slice_mut(out, n_out, n_out, "out")?;
        let plan = r.plan(tau);
        let comps: Vec<usize> = if component < 0 { vec![] } else { vec![component as usize] };
        let res = r.reconstruct_block(&plan, &samples, t, &comps)?;
        let values = if component < 0 { res.z } else { res.components.into_iter().next().expect("one component").1 };
        for (o, v) in out.iter_mut().zip(values) {
            *o = v.into();
        }
        Ok(())
    })
}

/// Pointwise error bound at offset t from τ for the signal (`component` < 0)
/// or one component. `a_s` lists one amplitude bound per component.
///
/// # Safety
/// `a_s` must hold `n_components` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mb_reconstructor_error_bound(
    r: *const MbReconstructor,
    a_eta: f64,
    a_s: *const f64,
    n_components: usize,
    epsilon: f64,
    component: i64,
    tau: f64,
    t: f64,
    out: *mut f64,
) -> MbStatus {
    guard(|| {
        let r = &get(r, "reconstructor")?.0;
        let budget = ErrorBudget { a_eta, a_s: slice(a_s, n_components, "a_s")?.to_vec(), epsilon };
        let v = r.error_bound(&budget, target(component), tau, t)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}

/// ε certified by the analytic tail bound; NaN for a null handle.
///
/// # Safety
/// `r` must be null or a live reconstructor handle.
#[no_mangle]
pub unsafe extern "C" fn mb_reconstructor_certified_epsilon(r: *const MbReconstructor) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.0.certified_epsilon())
}

/// # Safety
/// `r` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn mb_reconstructor_free(r: *mut MbReconstructor) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
