//! C interface to `partlens`.
//!
//! Every entry point returns a [`PlStatus`]. On failure the message is kept
//! per thread and read back with [`pl_last_error_message`]. Objects are
//! opaque handles created by `pl_*_create`/`pl_*_load`/`pl_*_generate`/
//! `pl_model_train` and released with the matching `pl_*_free`.
//!
//! Matrices cross the boundary as row-major `double` arrays and boolean
//! masks as `uint8_t` arrays where any non-zero byte means true.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use partlens::cfeval::{MaskSpec, RetrievalMetrics, SimilarityMatrix};
use partlens::diffmath::RealMatrix;
use partlens::iocli::{load_dataset, load_params, read_embeddings, save_dataset, save_params};
use partlens::ppim::{part_coverage_loss, EmbeddingBatch, PartLossConfig};
use partlens::toyworld::{eval_grounding, gen_dataset, train, EvalSet, ToyDataset, ToyEncoder, TrainConfig};
use partlens::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Shape = 3,
    Param = 4,
    Numeric = 5,
    Format = 6,
    Data = 7,
    Encoder = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for PlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Usage(_) => PlStatus::Usage,
            Error::Shape(_) => PlStatus::Shape,
            Error::Param(_) => PlStatus::Param,
            Error::Numeric(_) => PlStatus::Numeric,
            Error::Format { .. } => PlStatus::Format,
            Error::Data(_) => PlStatus::Data,
            Error::Encoder(_) => PlStatus::Encoder,
            Error::Io { .. } => PlStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `body`, records any error and converts it to a status code.
fn guard(body: impl FnOnce() -> FfiResult<()>) -> PlStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PlStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PlStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            PlStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".to_string());
            PlStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    // SAFETY: the caller guarantees `p` is null or points to a live `T`.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    // SAFETY: the caller guarantees `p` is null or points to writable storage.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `p` points to `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn path_arg(p: *const c_char, what: &'static str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Error::Usage(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn emit<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    let slot = out_ptr(out, "output handle")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

fn release<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this crate and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn pl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Five retrieval metrics as fractions in `[0, 1]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub map: f64,
    pub minp: f64,
}

impl From<RetrievalMetrics> for PlMetrics {
    fn from(m: RetrievalMetrics) -> Self {
        Self {
            r1: m.r1,
            r5: m.r5,
            r10: m.r10,
            map: m.map,
            minp: m.minp,
        }
    }
}

/// Ranks each gallery row by descending score (lower index first on ties)
/// and scores it against the relevance labels. Queries without a relevant
/// item are skipped; a matrix with none is a `PL_STATUS_DATA` error.
#[no_mangle]
pub extern "C" fn pl_metrics_evaluate(
    scores: *const f64,
    relevant: *const u8,
    queries: usize,
    gallery: usize,
    out: *mut PlMetrics,
) -> PlStatus {
    guard(|| {
        let n = queries.checked_mul(gallery).ok_or(Error::Shape("matrix size overflows".into()))?;
        let s = slice(scores, n, "scores")?;
        let r = slice(relevant, n, "relevant")?;
        let out = out_ptr(out, "out")?;
        let labels = (0..queries).map(|i| r[i * gallery..(i + 1) * gallery].iter().map(|&b| b != 0).collect()).collect();
        let m = SimilarityMatrix::new(RealMatrix::new(queries, gallery, s.to_vec())?, labels)?;
        *out = RetrievalMetrics::evaluate(&m)?.into();
        Ok(())
    })
}

/// Hyperparameters of the part and coverage losses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlLossConfig {
    pub tau_part: f64,
    pub tau_tal: f64,
    pub margin_tal: f64,
    pub lambda_part: f64,
    pub lambda_cov: f64,
    pub warmup_epochs: u32,
}

impl From<PartLossConfig> for PlLossConfig {
    fn from(c: PartLossConfig) -> Self {
        Self {
            tau_part: c.tau_part,
            tau_tal: c.tau_tal,
            margin_tal: c.margin_tal,
            lambda_part: c.lambda_part,
            lambda_cov: c.lambda_cov,
            warmup_epochs: c.warmup_epochs,
        }
    }
}

impl From<PlLossConfig> for PartLossConfig {
    fn from(c: PlLossConfig) -> Self {
        Self {
            tau_part: c.tau_part,
            tau_tal: c.tau_tal,
            margin_tal: c.margin_tal,
            lambda_part: c.lambda_part,
            lambda_cov: c.lambda_cov,
            warmup_epochs: c.warmup_epochs,
        }
    }
}

#[no_mangle]
pub extern "C" fn pl_loss_config_default() -> PlLossConfig {
    PartLossConfig::default().into()
}

/// Embeddings of one batch.
pub struct PlBatch(EmbeddingBatch);

/// Builds a batch from row-major arrays: `global_image` and `global_text`
/// are B×D, `patches` is B×K×D with K = grid_h·grid_w, `phrases` is B×P×D
/// and `phrase_mask` is B×P.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub extern "C" fn pl_batch_create(
    batch: usize,
    grid_h: usize,
    grid_w: usize,
    phrases: usize,
    dim: usize,
    global_image: *const f64,
    global_text: *const f64,
    patch_data: *const f64,
    phrase_data: *const f64,
    phrase_mask: *const u8,
    identities: *const i32,
    out: *mut *mut PlBatch,
) -> PlStatus {
    guard(|| {
        let k = grid_h * grid_w;
        let gi = slice(global_image, batch * dim, "global_image")?;
        let gt = slice(global_text, batch * dim, "global_text")?;
        let z = slice(patch_data, batch * k * dim, "patches")?;
        let h = slice(phrase_data, batch * phrases * dim, "phrases")?;
        let m = slice(phrase_mask, batch * phrases, "phrase_mask")?;
        let ids = slice(identities, batch, "identities")?;
        let patches = z
            .chunks(k * dim)
            .map(|c| RealMatrix::new(k, dim, c.to_vec()))
            .collect::<partlens::Result<Vec<_>>>()?;
        let phrase_rows = h
            .chunks(phrases * dim)
            .map(|c| RealMatrix::new(phrases, dim, c.to_vec()))
            .collect::<partlens::Result<Vec<_>>>()?;
        let mask = m.chunks(phrases).map(|c| c.iter().map(|&b| b != 0).collect()).collect();
        let b = EmbeddingBatch::new(
            (grid_h, grid_w),
            RealMatrix::new(batch, dim, gi.to_vec())?,
            RealMatrix::new(batch, dim, gt.to_vec())?,
            patches,
            phrase_rows,
            mask,
            ids.to_vec(),
        )?;
        emit(out, PlBatch(b))
    })
}

/// Reads an embeddings file written by the command-line tool.
#[no_mangle]
pub extern "C" fn pl_batch_load(path: *const c_char, out: *mut *mut PlBatch) -> PlStatus {
    guard(|| {
        let b = read_embeddings(path_arg(path, "path")?)?;
        emit(out, PlBatch(b))
    })
}

#[no_mangle]
pub extern "C" fn pl_batch_free(batch: *mut PlBatch) {
    release(batch);
}

#[no_mangle]
pub extern "C" fn pl_batch_size(batch: *const PlBatch) -> usize {
    // SAFETY: the caller passes null or a live handle.
    unsafe { batch.as_ref() }.map_or(0, |b| b.0.batch_size())
}

/// Value and components of `L_part + λ_cov·L_cov` at full warm-up.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlLossValue {
    pub total: f64,
    pub part: f64,
    pub coverage: f64,
}

/// Evaluates the part and coverage losses. When `grad_patches` or
/// `grad_phrases` is non-null it receives the gradient in the layout
/// used by [`pl_batch_create`].
#[no_mangle]
pub extern "C" fn pl_batch_part_loss(
    batch: *const PlBatch,
    config: *const PlLossConfig,
    out: *mut PlLossValue,
    grad_patches: *mut f64,
    grad_phrases: *mut f64,
) -> PlStatus {
    guard(|| {
        let b = &non_null(batch, "batch")?.0;
        let cfg: PartLossConfig = (*non_null(config, "config")?).into();
        let out = out_ptr(out, "out")?;
        let r = part_coverage_loss(b, &cfg)?;
        *out = PlLossValue {
            total: r.value,
            part: r.part,
            coverage: r.coverage,
        };
        let copy = |dst: *mut f64, src: &[RealMatrix]| {
            if dst.is_null() {
                return;
            }
            let mut at = 0;
            for m in src {
                // SAFETY: the caller sized `dst` like the matching input array.
                unsafe { ptr::copy_nonoverlapping(m.data().as_ptr(), dst.add(at), m.data().len()) };
                at += m.data().len();
            }
        };
        copy(grad_patches, &r.grads.patches);
        copy(grad_phrases, &r.grads.phrases);
        Ok(())
    })
}

/// A synthetic scene collection.
pub struct PlWorld(ToyDataset);

#[no_mangle]
pub extern "C" fn pl_world_generate(
    identities: usize,
    samples_per_identity: usize,
    grid_h: usize,
    grid_w: usize,
    image_h: usize,
    image_w: usize,
    seed: u64,
    out: *mut *mut PlWorld,
) -> PlStatus {
    guard(|| {
        let d = gen_dataset(identities, samples_per_identity, (grid_h, grid_w), (image_h, image_w), seed)?;
        emit(out, PlWorld(d))
    })
}

#[no_mangle]
pub extern "C" fn pl_world_load(dir: *const c_char, out: *mut *mut PlWorld) -> PlStatus {
    guard(|| {
        let d = load_dataset(path_arg(dir, "dir")?)?;
        emit(out, PlWorld(d))
    })
}

#[no_mangle]
pub extern "C" fn pl_world_save(world: *const PlWorld, dir: *const c_char) -> PlStatus {
    guard(|| {
        let w = non_null(world, "world")?;
        save_dataset(&w.0, path_arg(dir, "dir")?)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pl_world_free(world: *mut PlWorld) {
    release(world);
}

#[no_mangle]
pub extern "C" fn pl_world_len(world: *const PlWorld) -> usize {
    // SAFETY: the caller passes null or a live handle.
    unsafe { world.as_ref() }.map_or(0, |w| w.0.scenes.len())
}

/// A toy encoder with the phrase-slot count used at evaluation.
pub struct PlModel {
    encoder: ToyEncoder,
    phrase_slots: usize,
}

/// Trains on `world` with the default schedule, overriding the epoch
/// count and `λ_part`.
#[no_mangle]
pub extern "C" fn pl_model_train(
    world: *const PlWorld,
    epochs: u32,
    lambda_part: f64,
    seed: u64,
    out: *mut *mut PlModel,
) -> PlStatus {
    guard(|| {
        let w = non_null(world, "world")?;
        let mut cfg = TrainConfig {
            epochs,
            ..Default::default()
        };
        cfg.loss.lambda_part = lambda_part;
        let encoder = train(&w.0, &cfg, seed)?.encoder;
        emit(
            out,
            PlModel {
                encoder,
                phrase_slots: cfg.phrase_slots,
            },
        )
    })
}

#[no_mangle]
pub extern "C" fn pl_model_load(path: *const c_char, out: *mut *mut PlModel) -> PlStatus {
    guard(|| {
        let encoder = load_params(path_arg(path, "path")?)?;
        emit(
            out,
            PlModel {
                encoder,
                phrase_slots: TrainConfig::default().phrase_slots,
            },
        )
    })
}

#[no_mangle]
pub extern "C" fn pl_model_save(model: *const PlModel, path: *const c_char) -> PlStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        save_params(&m.encoder, path_arg(path, "path")?)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pl_model_free(model: *mut PlModel) {
    release(model);
}

/// Outcome of one counterfactual evaluation. `delta_pct` follows the
/// order R@1, R@5, R@10, mAP, mINP; `delta_pct_defined[m]` is zero when the
/// baseline of metric `m` is zero and the relative drop is undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PlCounterfactual {
    pub baseline: PlMetrics,
    pub counterfactual: PlMetrics,
    pub delta_pct: [f64; 5],
    pub delta_pct_defined: [u8; 5],
    /// Number of gallery cells whose score changed.
    pub changed_cells: usize,
}

/// Runs the counterfactual protocol with every scene of `world` as both
/// a caption query and a gallery image.
#[no_mangle]
pub extern "C" fn pl_counterfactual(
    model: *const PlModel,
    world: *const PlWorld,
    alpha: f64,
    p: f64,
    out: *mut PlCounterfactual,
) -> PlStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let w = non_null(world, "world")?;
        let out = out_ptr(out, "out")?;
        let set = EvalSet::build(&m.encoder, &w.0.scenes, m.phrase_slots)?;
        let r = set.run(&m.encoder, MaskSpec::new(alpha, p)?)?;
        let mut res = PlCounterfactual {
            baseline: r.baseline.into(),
            counterfactual: r.counterfactual.into(),
            changed_cells: r.baseline_matrix.diff_cells(&r.counterfactual_matrix).len(),
            ..Default::default()
        };
        for (k, d) in r.drops.iter().enumerate() {
            res.delta_pct[k] = d.delta_pct.unwrap_or(0.0);
            res.delta_pct_defined[k] = u8::from(d.delta_pct.is_some());
        }
        *out = res;
        Ok(())
    })
}

/// Mean relevance mass inside the true part rectangles, and the same
/// quantity for a uniform map.
#[no_mangle]
pub extern "C" fn pl_grounding(
    model: *const PlModel,
    world: *const PlWorld,
    mean: *mut f64,
    uniform_mean: *mut f64,
) -> PlStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let w = non_null(world, "world")?;
        let mean = out_ptr(mean, "mean")?;
        let uniform = out_ptr(uniform_mean, "uniform_mean")?;
        let g = eval_grounding(&m.encoder, &w.0.scenes)?;
        *mean = g.mean;
        *uniform = g.uniform_mean;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = pl_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn metrics_hand_case() {
        let scores = [0.9, 0.8, 0.7, 0.6];
        let rel = [0u8, 1, 0, 0];
        let mut m = PlMetrics::default();
        assert_eq!(pl_metrics_evaluate(scores.as_ptr(), rel.as_ptr(), 1, 4, &mut m), PlStatus::Ok);
        assert!(pl_last_error_message().is_null());
        assert_eq!((m.r1, m.r5, m.map, m.minp), (0.0, 1.0, 0.5, 0.5));
    }

    #[test]
    fn null_and_library_errors() {
        let mut m = PlMetrics::default();
        assert_eq!(pl_metrics_evaluate(ptr::null(), ptr::null(), 1, 1, &mut m), PlStatus::NullPointer);
        assert!(last_error().contains("scores"));
        let none = [0u8; 2];
        assert_eq!(pl_metrics_evaluate([0.1, 0.2].as_ptr(), none.as_ptr(), 1, 2, &mut m), PlStatus::Data);
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/params.bin").unwrap();
        assert_eq!(pl_model_load(missing.as_ptr(), &mut model), PlStatus::Io);
        assert!(model.is_null());
        pl_model_free(ptr::null_mut());
    }

    #[test]
    fn loss_gradients_match_library() {
        let (b, k, p, d) = (2usize, 4usize, 2usize, 3usize);
        let wave = |n: usize, phase: f64| -> Vec<f64> { (0..n).map(|i| (i as f64 * 0.7 + phase).sin()).collect() };
        let unit_rows = |v: Vec<f64>| -> Vec<f64> {
            v.chunks(d)
                .flat_map(|r| {
                    let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                    r.iter().map(move |x| x / n).collect::<Vec<_>>()
                })
                .collect()
        };
        let gi = unit_rows(wave(b * d, 0.1));
        let gt = unit_rows(wave(b * d, 0.4));
        let z = unit_rows(wave(b * k * d, 0.9));
        let h = unit_rows(wave(b * p * d, 1.3));
        let mask = [1u8; 4];
        let ids = [0i32, 1];
        let mut batch = ptr::null_mut();
        let s = pl_batch_create(
            b, 2, 2, p, d, gi.as_ptr(), gt.as_ptr(), z.as_ptr(), h.as_ptr(), mask.as_ptr(), ids.as_ptr(), &mut batch,
        );
        assert_eq!(s, PlStatus::Ok, "{}", last_error());
        assert_eq!(pl_batch_size(batch), 2);
        let cfg = pl_loss_config_default();
        assert_eq!(cfg.tau_part, 0.07);
        let mut v = PlLossValue::default();
        let mut gz = vec![0.0; z.len()];
        assert_eq!(pl_batch_part_loss(batch, &cfg, &mut v, gz.as_mut_ptr(), ptr::null_mut()), PlStatus::Ok);
        let direct = part_coverage_loss(unsafe { &(*batch).0 }, &cfg.into()).unwrap();
        assert_eq!(v.total, direct.value);
        assert_eq!(&gz[..k * d], direct.grads.patches[0].data());
        pl_batch_free(batch);
    }
}
