use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::to_scalar;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("shapes {:?} and {:?} differ", a.dims(), b.dims())));
    }
    Ok(())
}

/// Leading batch axis for inputs of rank ≥ 3, otherwise a single sample.
fn per_sample_sums(x: &Tensor) -> Result<Tensor> {
    let x = if x.rank() >= 3 { x.clone() } else { x.unsqueeze(0)? };
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.sum(1)?)
}

/// Spectral convergence `‖s − ŝ‖_F / ‖s‖_F`, averaged over the batch for
/// `(B, frames, bins)` inputs.
pub fn loss_sc(s: &Tensor, s_hat: &Tensor) -> Result<Tensor> {
    same_shape(s, s_hat)?;
    let denom = per_sample_sums(&s.sqr()?)?;
    if denom.min(0)?.to_scalar::<f32>()? <= 0.0 {
        return Err(Error::invalid("spectral convergence needs a nonzero reference"));
    }
    // The tiny offset keeps the square root differentiable at s == ŝ.
    let num = (per_sample_sums(&(s - s_hat)?.sqr()?)? + 1e-30)?.sqrt()?;
    Ok((num / denom.sqrt()?)?.mean_all()?)
}

/// Mean absolute log-magnitude difference over every element.
pub fn loss_mag(s: &Tensor, s_hat: &Tensor) -> Result<Tensor> {
    same_shape(s, s_hat)?;
    for t in [s, s_hat] {
        if t.flatten_all()?.min(0)?.to_scalar::<f32>()? <= 0.0 {
            return Err(Error::invalid("log magnitude loss needs positive magnitudes"));
        }
    }
    Ok((s.log()? - s_hat.log()?)?.abs()?.mean_all()?)
}

/// `(1/M) Σ_m [L_sc(s_m, ŝ_m) + L_mag(s_m, ŝ_m)]` over per-resolution
/// magnitude spectrograms.
pub fn loss_aux(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::shape(format!(
            "{} real and {} generated spectrograms",
            real.len(),
            fake.len()
        )));
    }
    let mut total = None;
    for (s, s_hat) in real.iter().zip(fake) {
        let term = (loss_sc(s, s_hat)? + loss_mag(s, s_hat)?)?;
        total = Some(match total {
            None => term,
            Some(t) => (t + term)?,
        });
    }
    Ok((total.expect("non-empty") / real.len() as f64)?)
}

/// Mean cosine between rows of `(N, d)` and a `(d)` or `(N, d)` target.
pub fn mean_cosine(converted: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (n, d) = converted.dims2()?;
    let target = match target.rank() {
        1 => target.unsqueeze(0)?,
        _ => target.clone(),
    };
    if target.dim(1)? != d || !(target.dim(0)? == 1 || target.dim(0)? == n) {
        return Err(Error::shape(format!(
            "target {:?} does not match {:?}",
            target.dims(),
            converted.dims()
        )));
    }
    let nc = converted.sqr()?.sum(1)?;
    let nt = target.sqr()?.sum(1)?;
    if to_scalar(&nc.min(0)?)? <= 0.0 || to_scalar(&nt.min(0)?)? <= 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot = converted.broadcast_mul(&target)?.sum(D::Minus1)?;
    let cos = (dot / nc.broadcast_mul(&nt)?.sqrt()?)?;
    Ok(cos.mean_all()?)
}

/// Speaker similarity criterion `1 − (1/N) Σ cos(E_s(x̂_n), s′)`.
pub fn loss_ssc(converted: &Tensor, target: &Tensor) -> Result<Tensor> {
    if converted.dims2()?.0 == 0 {
        return Err(Error::invalid("no converted embeddings"));
    }
    Ok(mean_cosine(converted, target)?.affine(-1.0, 1.0)?)
}

/// `(1/K) Σ_k mean((D_k − 1)²)` over generated-audio score maps.
pub fn loss_adversarial(fake_scores: &[Tensor]) -> Result<Tensor> {
    if fake_scores.is_empty() {
        return Err(Error::invalid("no score maps"));
    }
    let k = fake_scores.len() as f64;
    let mut total = Tensor::zeros((), candle_core::DType::F32, fake_scores[0].device())?;
    for s in fake_scores {
        total = (total + (s - 1.0)?.sqr()?.mean_all()?)?;
    }
    Ok((total / k)?)
}

/// `L_G = (1/K) Σ_k mean((D_k(x̂) − 1)²) + λ_aux L_aux + λ_ssc L_ssc`.
pub fn loss_generator(
    fake_scores: &[Tensor],
    aux: &Tensor,
    ssc: Option<&Tensor>,
    lambda_aux: f64,
    lambda_ssc: f64,
) -> Result<Tensor> {
    let mut total = (loss_adversarial(fake_scores)? + (aux * lambda_aux)?)?;
    if let Some(ssc) = ssc {
        total = (total + (ssc * lambda_ssc)?)?;
    }
    Ok(total)
}

/// `L_D = (1/K) Σ_k [mean((D_k(x) − 1)²) + mean(D_k(x̂)²)]`.
pub fn loss_discriminator(real_scores: &[Tensor], fake_scores: &[Tensor]) -> Result<Tensor> {
    if real_scores.is_empty() || real_scores.len() != fake_scores.len() {
        return Err(Error::shape(format!(
            "{} real and {} fake score maps",
            real_scores.len(),
            fake_scores.len()
        )));
    }
    let k = real_scores.len() as f64;
    let mut total = Tensor::zeros((), candle_core::DType::F32, real_scores[0].device())?;
    for (r, f) in real_scores.iter().zip(fake_scores) {
        let term = ((r - 1.0)?.sqr()?.mean_all()? + f.sqr()?.mean_all()?)?;
        total = (total + term)?;
    }
    Ok((total / k)?)
}
