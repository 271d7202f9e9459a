//! The seven-term training objective, the critic objective and a per-step report.
//!
//! All L1/L2 terms use mean reduction over every element.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{gram, FeatureNetwork};
use crate::nn;
use crate::ssim::{self, SsimConfig};

/// Terms of the generator objective that carry a weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Adv,
    Attr,
    MsSsim,
    Style,
    Percep,
    Hole,
    Valid,
}

impl Term {
    pub const ALL: [Term; 7] = [
        Term::Adv,
        Term::Attr,
        Term::MsSsim,
        Term::Style,
        Term::Percep,
        Term::Hole,
        Term::Valid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Term::Adv => "adv_g",
            Term::Attr => "attr",
            Term::MsSsim => "ms_ssim",
            Term::Style => "style",
            Term::Percep => "percep",
            Term::Hole => "hole",
            Term::Valid => "valid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub adv: f64,
    pub ssim: f64,
    pub style: f64,
    pub percep: f64,
    pub hole: f64,
    pub valid: f64,
    pub attr: f64,
    pub gp: f64,
    /// Terms switched off for ablation runs; their raw values are still reported.
    pub ablate: Vec<Term>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 0.1,
            ssim: 3.0,
            style: 120.0,
            percep: 0.01,
            hole: 6.0,
            valid: 1.0,
            attr: 1.0,
            gp: 10.0,
            ablate: Vec::new(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("adv", self.adv),
            ("ssim", self.ssim),
            ("style", self.style),
            ("percep", self.percep),
            ("hole", self.hole),
            ("valid", self.valid),
            ("attr", self.attr),
            ("gp", self.gp),
        ];
        for (name, w) in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "loss weight `{name}` must be finite and ≥ 0, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn without(mut self, term: Term) -> Self {
        if !self.ablate.contains(&term) {
            self.ablate.push(term);
        }
        self
    }

    /// Weight applied to `term` in the total, after ablation.
    pub fn effective(&self, term: Term) -> f64 {
        if self.ablate.contains(&term) {
            return 0.0;
        }
        match term {
            Term::Adv => self.adv,
            Term::Attr => self.attr,
            Term::MsSsim => self.ssim,
            Term::Style => self.style,
            Term::Percep => self.percep,
            Term::Hole => self.hole,
            Term::Valid => self.valid,
        }
    }
}

/// Raw values of the weighted generator terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub hole: f64,
    pub valid: f64,
    pub percep: f64,
    pub style: f64,
    pub ms_ssim: f64,
    pub attr: f64,
    pub adv_g: f64,
}

impl LossTerms {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Adv => self.adv_g,
            Term::Attr => self.attr,
            Term::MsSsim => self.ms_ssim,
            Term::Style => self.style,
            Term::Percep => self.percep,
            Term::Hole => self.hole,
            Term::Valid => self.valid,
        }
    }
}

/// One training step's losses. Serialises as a JSON-lines record with `step` first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub hole: f64,
    pub valid: f64,
    pub percep: f64,
    pub style: f64,
    pub ms_ssim: f64,
    /// Both attribute terms: `MSE(A_aux, A_ext) + MSE(A_gt, AE(I_gt))`.
    pub attr: f64,
    /// The generator-facing part, `MSE(AE(I_fake), A_ext)`.
    pub attr_fake: f64,
    /// The auxiliary-extractor part, `MSE(A_gt, AE(I_gt))`.
    pub attr_aux: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub gp: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            hole: self.hole,
            valid: self.valid,
            percep: self.percep,
            style: self.style,
            ms_ssim: self.ms_ssim,
            attr: self.attr,
            adv_g: self.adv_g,
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// First non-finite field, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("hole", self.hole),
            ("valid", self.valid),
            ("percep", self.percep),
            ("style", self.style),
            ("ms_ssim", self.ms_ssim),
            ("attr", self.attr),
            ("attr_fake", self.attr_fake),
            ("attr_aux", self.attr_aux),
            ("adv_g", self.adv_g),
            ("adv_d", self.adv_d),
            ("gp", self.gp),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Weighted sum of the seven generator terms.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for term in Term::ALL {
        let v = terms.get(term);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: term.name().into(),
                report: None,
            });
        }
        total += weights.effective(term) * v;
    }
    Ok(total)
}

/// Builds a report from raw terms and recomputes the total.
pub fn report(step: u64, terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    Ok(LossReport {
        step,
        hole: terms.hole,
        valid: terms.valid,
        percep: terms.percep,
        style: terms.style,
        ms_ssim: terms.ms_ssim,
        attr: terms.attr,
        adv_g: terms.adv_g,
        total: total_loss(terms, weights)?,
        ..LossReport::default()
    })
}

/// Differentiable counterparts of [`LossTerms`].
#[derive(Debug, Clone)]
pub struct TermTensors {
    pub hole: Tensor,
    pub valid: Tensor,
    pub percep: Tensor,
    pub style: Tensor,
    pub ms_ssim: Tensor,
    pub attr: Tensor,
    pub adv_g: Tensor,
}

impl TermTensors {
    pub fn get(&self, term: Term) -> &Tensor {
        match term {
            Term::Adv => &self.adv_g,
            Term::Attr => &self.attr,
            Term::MsSsim => &self.ms_ssim,
            Term::Style => &self.style,
            Term::Percep => &self.percep,
            Term::Hole => &self.hole,
            Term::Valid => &self.valid,
        }
    }

    pub fn values(&self) -> Result<LossTerms> {
        Ok(LossTerms {
            hole: nn::to_scalar(&self.hole)?,
            valid: nn::to_scalar(&self.valid)?,
            percep: nn::to_scalar(&self.percep)?,
            style: nn::to_scalar(&self.style)?,
            ms_ssim: nn::to_scalar(&self.ms_ssim)?,
            attr: nn::to_scalar(&self.attr)?,
            adv_g: nn::to_scalar(&self.adv_g)?,
        })
    }

    pub fn total(&self, weights: &LossWeights) -> Result<Tensor> {
        let mut total = nn::scalar(0.0)?;
        for term in Term::ALL {
            let w = weights.effective(term);
            if w != 0.0 {
                total = (total + (self.get(term) * w)?)?;
            }
        }
        Ok(total)
    }
}

fn check_mask(image: &Tensor, mask: &Tensor) -> Result<()> {
    let (b, _, h, w) = image.dims4()?;
    if mask.dims() != [b, 1, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} does not match image {:?}",
            mask.dims(),
            image.dims()
        )));
    }
    Ok(())
}

/// `mean |I_recon⊙(1−M) − I_gt⊙(1−M)|`.
pub fn loss_hole(recon: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Tensor> {
    nn::check_same_shape("hole loss", recon, gt)?;
    check_mask(recon, mask)?;
    let hole = mask.affine(-1.0, 1.0)?;
    Ok((recon - gt)?.broadcast_mul(&hole)?.abs()?.mean_all()?)
}

/// `mean |I_recon⊙M − I_masked|`.
pub fn loss_valid(recon: &Tensor, masked: &Tensor, mask: &Tensor) -> Result<Tensor> {
    nn::check_same_shape("valid loss", recon, masked)?;
    check_mask(recon, mask)?;
    Ok((recon.broadcast_mul(mask)? - masked)?.abs()?.mean_all()?)
}

fn check_taps(net: &FeatureNetwork) -> Result<()> {
    if net.tap_count() == 0 {
        return Err(Error::Config("feature network has no tap layers".into()));
    }
    Ok(())
}

fn perceptual_from(fa: &[Tensor], fb: &[Tensor]) -> Result<Tensor> {
    let mut sum = nn::scalar(0.0)?;
    for (a, b) in fa.iter().zip(fb) {
        sum = (sum + (a - b)?.sqr()?.mean_all()?)?;
    }
    Ok((sum / fa.len() as f64)?)
}

fn style_from(fa: &[Tensor], fb: &[Tensor]) -> Result<Tensor> {
    let mut sum = nn::scalar(0.0)?;
    for (a, b) in fa.iter().zip(fb) {
        sum = (sum + (gram(a)? - gram(b)?)?.sqr()?.mean_all()?)?;
    }
    Ok((sum / fa.len() as f64)?)
}

/// `(1/N) Σ_i mean (φ_i(I_gt) − φ_i(I_comp))²`.
pub fn loss_perceptual(gt: &Tensor, comp: &Tensor, net: &FeatureNetwork) -> Result<Tensor> {
    check_taps(net)?;
    nn::check_same_shape("perceptual loss", gt, comp)?;
    perceptual_from(&net.features(gt)?, &net.features(comp)?)
}

/// `(1/N) Σ_j mean (G_j(I_gt) − G_j(I_comp))²` with `G = F·Fᵀ / (C·H·W)`.
pub fn loss_style(gt: &Tensor, comp: &Tensor, net: &FeatureNetwork) -> Result<Tensor> {
    check_taps(net)?;
    nn::check_same_shape("style loss", gt, comp)?;
    style_from(&net.features(gt)?, &net.features(comp)?)
}

/// Perceptual and style losses sharing one feature pass.
pub fn loss_perceptual_and_style(gt: &Tensor, comp: &Tensor, net: &FeatureNetwork) -> Result<(Tensor, Tensor)> {
    check_taps(net)?;
    nn::check_same_shape("perceptual loss", gt, comp)?;
    let fa = net.features(&gt.detach())?;
    let fb = net.features(comp)?;
    Ok((perceptual_from(&fa, &fb)?, style_from(&fa, &fb)?))
}

/// `1 − mean_b MS-SSIM(I_recon, I_gt)`.
pub fn loss_ms_ssim(recon: &Tensor, gt: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    ssim::ms_ssim_loss(recon, gt, cfg)
}

fn check_attrs(what: &str, t: &Tensor) -> Result<()> {
    match t.dims() {
        [_, 8] | [8] => Ok(()),
        d => Err(Error::ShapeMismatch(format!(
            "{what}: expected 8 attributes, got {d:?}"
        ))),
    }
}

/// `MSE(A_aux, A_ext) + MSE(A_gt, AE(I_gt))`.
pub fn loss_attr(a_aux: &Tensor, a_ext: &Tensor, a_gt: &Tensor, ae_on_gt: &Tensor) -> Result<Tensor> {
    for (n, t) in [
        ("A_aux", a_aux),
        ("A_ext", a_ext),
        ("A_gt", a_gt),
        ("AE(I_gt)", ae_on_gt),
    ] {
        check_attrs(n, t)?;
    }
    Ok((nn::mse(a_aux, a_ext)? + nn::mse(a_gt, ae_on_gt)?)?)
}

fn check_scores(scores: &Tensor) -> Result<()> {
    if scores.elem_count() == 0 {
        return Err(Error::InvalidArgument("empty batch of critic scores".into()));
    }
    Ok(())
}

/// `−mean(D(I_fake))`.
pub fn loss_adversarial_g(fake_scores: &Tensor) -> Result<Tensor> {
    check_scores(fake_scores)?;
    Ok(fake_scores.mean_all()?.neg()?)
}

/// `mean(D(I_fake)) − mean(D(I_gt)) + gp`.
pub fn loss_adversarial_d(real_scores: &Tensor, fake_scores: &Tensor, gp: &Tensor) -> Result<Tensor> {
    check_scores(real_scores)?;
    check_scores(fake_scores)?;
    Ok(((fake_scores.mean_all()? - real_scores.mean_all()?)? + gp)?)
}
