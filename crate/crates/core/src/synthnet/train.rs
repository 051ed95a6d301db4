//! Desk-scale trainer: Adam on the HTMP loss, optionally with an LSGAN
//! patch discriminator trained in alternating single steps.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::discriminator::{lsgan_d_grads, lsgan_g_grad, lsgan_losses, Discriminator, PATCH};
use super::network::Generator;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::{Gamut, Image, Transfer};
use crate::lut::Lut3D;
use crate::region::{HtmpConfig, HtmpLoss, HtmpSupervision};
use crate::tmo::Tmo;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub adam: AdamConfig,
    /// Weight of the adversarial generator loss.
    pub lambda: f64,
    pub steps: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub patches_per_frame: usize,
    pub adversarial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            adam: AdamConfig::default(),
            lambda: 0.01,
            steps: 1000,
            patch_size: 64,
            batch_size: 4,
            patches_per_frame: 1,
            adversarial: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.steps == 0 || self.batch_size == 0 || self.patches_per_frame == 0 {
            return Err(Error::InvalidParameter("steps, batch size and patches per frame must be >= 1".into()));
        }
        if self.patch_size < 16 {
            return Err(Error::InvalidParameter(format!("patch size {} below 16", self.patch_size)));
        }
        if self.adversarial && self.patch_size < PATCH {
            return Err(Error::InvalidParameter(format!(
                "adversarial training needs patches of at least {PATCH}, got {}",
                self.patch_size
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Baseline renderings fed to the condition network: Clip, Linear,
/// Reinhard and the LUT operator, concatenated to `(1, 12, H, W)`.
pub fn condition_tensor(h: &Image, lut: &Lut3D) -> Result<Tensor> {
    let parts = [
        Tmo::clip().apply(h)?,
        Tmo::linear().apply(h)?,
        Tmo::reinhard().apply(h)?,
        lut.apply(h)?,
    ];
    let tensors: Vec<Tensor> = parts.iter().map(Tensor::from_image).collect();
    Tensor::concat_channels(&tensors.iter().collect::<Vec<_>>())
}

/// One training patch with everything precomputed.
#[derive(Debug, Clone)]
pub struct Sample {
    pub h: Tensor,
    pub conds: Tensor,
    pub sup: HtmpSupervision,
    /// SDR reference shown to the discriminator as real.
    pub real: Tensor,
}

/// Crops training patches. Conditions and targets come from the whole
/// frame, so frame-level statistics are shared by all of its patches.
/// Without explicit SDR references the HTMP targets act as real samples.
pub fn prepare_samples(
    frames: &[Image],
    real_sdr: Option<&[Image]>,
    htmp: &HtmpConfig,
    cfg: &TrainConfig,
) -> Result<Vec<Sample>> {
    if frames.is_empty() {
        return Err(Error::InvalidParameter("training needs at least one HDR frame".into()));
    }
    if let Some(r) = real_sdr {
        if r.len() != frames.len() {
            return Err(Error::SizeMismatch(format!("{} HDR frames but {} SDR references", frames.len(), r.len())));
        }
    }
    let p = cfg.patch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7061_7463_6865_73);
    let mut samples = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if f.width() < p || f.height() < p {
            return Err(Error::SizeMismatch(format!(
                "frame {i} is {}x{}, smaller than patch size {p}",
                f.width(),
                f.height()
            )));
        }
        let h = Tensor::from_image(f);
        let conds = condition_tensor(f, &htmp.lut)?;
        let sup = HtmpSupervision::new(f, htmp)?;
        let real = match real_sdr {
            Some(r) => {
                r[i].require_same_size(f)?;
                r[i].require_tags(Gamut::Bt709, Transfer::Gamma709)?;
                Tensor::from_image(&r[i])
            }
            None => Tensor::from_image(&sup.target),
        };
        for _ in 0..cfg.patches_per_frame {
            let x0 = rng.random_range(0..=f.width() - p);
            let y0 = rng.random_range(0..=f.height() - p);
            samples.push(Sample {
                h: h.crop(y0, x0, p, p)?,
                conds: conds.crop(y0, x0, p, p)?,
                sup: sup.crop(x0, y0, p, p)?,
                real: real.crop(y0, x0, p, p)?,
            });
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub l_htmp: f64,
    pub l_high: f64,
    pub l_mid: f64,
    pub l_low: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "step,l_htmp,l_high,l_mid,l_low,l_adv_g,l_adv_d")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step, r.l_htmp, r.l_high, r.l_mid, r.l_low, r.l_adv_g, r.l_adv_d
        )?;
    }
    Ok(())
}

/// Mean HTMP loss of the generator over all samples.
pub fn evaluate(gen: &Generator, samples: &[Sample]) -> Result<HtmpLoss> {
    let losses: Vec<HtmpLoss> = samples
        .par_iter()
        .map(|s| {
            let (out, _) = gen.forward(&s.h, &s.conds)?;
            s.sup.loss_planar(out.data())
        })
        .collect::<Result<_>>()?;
    let n = losses.len() as f64;
    let mut acc = HtmpLoss::default();
    for l in &losses {
        acc.total += l.total / n;
        acc.high += l.high / n;
        acc.mid += l.mid / n;
        acc.low += l.low / n;
    }
    Ok(acc)
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen: Generator,
    pub disc: Option<Discriminator>,
    opt_g: Adam,
    opt_d: Option<Adam>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

struct ItemResult {
    loss: HtmpLoss,
    adv_g: f64,
    grad: Vec<f64>,
    fake_crop: Option<Tensor>,
}

fn check_finite(step: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

impl Trainer {
    pub fn new(gen: Generator, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let disc = cfg.adversarial.then(|| Discriminator::init(cfg.seed.wrapping_add(1)));
        let opt_g = Adam::new(cfg.adam, gen.theta.len());
        let opt_d = disc.as_ref().map(|d| Adam::new(cfg.adam, d.theta.len()));
        Ok(Self {
            cfg,
            gen,
            disc,
            opt_g,
            opt_d,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
        })
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One generator update (and one discriminator update when adversarial).
    pub fn step(&mut self, samples: &[Sample]) -> Result<TraceRow> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("no training samples".into()));
        }
        self.step += 1;
        let step = self.step;
        let batch = self.next_batch(samples.len());
        let b = batch.len() as f64;
        let crops: Vec<(usize, usize)> = batch
            .iter()
            .map(|&i| {
                if self.disc.is_some() {
                    let [_, _, h, w] = samples[i].h.shape();
                    (self.rng.random_range(0..=h - PATCH), self.rng.random_range(0..=w - PATCH))
                } else {
                    (0, 0)
                }
            })
            .collect();

        let gen = &self.gen;
        let disc = self.disc.as_ref();
        let lambda = self.cfg.lambda;
        let results: Vec<ItemResult> = batch
            .par_iter()
            .zip(&crops)
            .map(|(&i, &(y0, x0))| -> Result<ItemResult> {
                let s = &samples[i];
                let (out, cache) = gen.forward(&s.h, &s.conds)?;
                let loss = s.sup.loss_planar(out.data())?;
                let g = s.sup.grad_planar(out.data())?;
                let mut gs = Tensor::new(out.shape(), g.iter().map(|v| v / b).collect())?;
                let (mut adv_g, mut fake_crop) = (0.0, None);
                if let Some(d) = disc {
                    let crop = out.crop(y0, x0, PATCH, PATCH)?;
                    let (score, dcache) = d.forward(&crop)?;
                    adv_g = lsgan_losses(&score, &score)?.g;
                    if lambda > 0.0 {
                        let gscore = lsgan_g_grad(&score).map(|v| v * lambda / b);
                        let (_, gcrop) = d.backward(&dcache, &gscore)?;
                        gs.add_window(y0, x0, &gcrop);
                    }
                    fake_crop = Some(crop);
                }
                let grad = gen.backward(&cache, &gs)?;
                Ok(ItemResult { loss, adv_g, grad, fake_crop })
            })
            .collect::<Result<_>>()?;

        let mut row = TraceRow { step, ..Default::default() };
        let mut grad = vec![0.0; self.gen.theta.len()];
        for r in &results {
            row.l_htmp += r.loss.total / b;
            row.l_high += r.loss.high / b;
            row.l_mid += r.loss.mid / b;
            row.l_low += r.loss.low / b;
            row.l_adv_g += r.adv_g / b;
            for (a, v) in grad.iter_mut().zip(&r.grad) {
                *a += v;
            }
        }
        check_finite(step, &[row.l_htmp, row.l_adv_g])?;
        check_finite(step, &grad)?;
        self.opt_g.step(&mut self.gen.theta, &grad);
        check_finite(step, &self.gen.theta)?;

        if let (Some(d), Some(opt_d)) = (self.disc.as_mut(), self.opt_d.as_mut()) {
            let d_ref = &*d;
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .zip(&crops)
                .zip(&results)
                .map(|((&i, &(y0, x0)), r)| -> Result<(f64, Vec<f64>)> {
                    let real = samples[i].real.crop(y0, x0, PATCH, PATCH)?;
                    let fake = r.fake_crop.as_ref().expect("fake crop recorded");
                    let (dr, cr) = d_ref.forward(&real)?;
                    let (df, cf) = d_ref.forward(fake)?;
                    let loss = lsgan_losses(&dr, &df)?.d;
                    let (gr, gf) = lsgan_d_grads(&dr, &df);
                    let (mut g, _) = d_ref.backward(&cr, &gr.map(|v| v / b))?;
                    let (g2, _) = d_ref.backward(&cf, &gf.map(|v| v / b))?;
                    for (a, v) in g.iter_mut().zip(&g2) {
                        *a += v;
                    }
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            let mut gd = vec![0.0; d.theta.len()];
            for (loss, g) in &parts {
                row.l_adv_d += loss / b;
                for (a, v) in gd.iter_mut().zip(g) {
                    *a += v;
                }
            }
            check_finite(step, &[row.l_adv_d])?;
            check_finite(step, &gd)?;
            opt_d.step(&mut d.theta, &gd);
            check_finite(step, &d.theta)?;
        }
        Ok(row)
    }

    pub fn run(&mut self, samples: &[Sample]) -> Result<Vec<TraceRow>> {
        (0..self.cfg.steps).map(|_| self.step(samples)).collect()
    }
}

/// Trains a freshly initialized or given generator for `cfg.steps` steps.
pub fn train(gen: Generator, samples: &[Sample], cfg: TrainConfig) -> Result<(Trainer, Vec<TraceRow>)> {
    let mut t = Trainer::new(gen, cfg)?;
    let trace = t.run(samples)?;
    Ok((t, trace))
}

/// Runs the generator on a full PQ frame; the result is clamped and tagged SDR.
pub fn synthesize(gen: &Generator, h: &Image, lut: &Lut3D) -> Result<Image> {
    h.require_tags(Gamut::Bt2020, Transfer::Pq)?;
    let conds = condition_tensor(h, lut)?;
    let (out, _) = gen.forward(&Tensor::from_image(h), &conds)?;
    out.to_image(0, Gamut::Bt709, Transfer::Gamma709)
}
