//! Closed-form FLOPs/parameter counts for token-mixing layers and a latency
//! micro-benchmark.
//!
//! FLOPs follow the per-layer formulas below literally (one multiply-add
//! counts once); `log2` is taken of `HW` as a real number. `H` and `W` are
//! low-resolution extents.
//!
//! | kind | FLOPs | params |
//! |---|---|---|
//! | Conv | k²C²HW | k²C² |
//! | WTrans | 4C²HW + 2M²CHW | 4C² |
//! | FFC | k²C²HW + 2CHW·log2(HW) | k²C² |
//! | GFNet | CHW + 2CHW·log2(HW) | CHW |
//! | AFNO, AFFNet | 8C²HW/ρ + 2CHW·log2(HW) | (1 + 4/ρ)C² + 4C |
//! | FourierSR | C²HW/ρ + 2CHW·log2(HW) | (6 + ρ)C, shape count C²/ρ + 6C |

mod attention;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use attention::WindowAttention;

use crate::autodiff::conv3x3_forward;
use crate::error::{Error, Result};
use crate::fourier_ops::{fourier_sr_forward, FourierSRParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Conv,
    WTrans,
    Ffc,
    GfNet,
    Afno,
    AffNet,
    FourierSr,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Conv,
        Kind::WTrans,
        Kind::Ffc,
        Kind::GfNet,
        Kind::Afno,
        Kind::AffNet,
        Kind::FourierSr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Conv => "conv",
            Kind::WTrans => "wtrans",
            Kind::Ffc => "ffc",
            Kind::GfNet => "gfnet",
            Kind::Afno => "afno",
            Kind::AffNet => "affnet",
            Kind::FourierSr => "fouriersr",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "ours" | "fourier_sr" => Ok(Kind::FourierSr),
            "attention" | "window_attention" => Ok(Kind::WTrans),
            _ => Kind::ALL
                .into_iter()
                .find(|k| k.name() == lower)
                .ok_or_else(|| Error::Config(format!("unknown kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexitySpec {
    pub kind: Kind,
    /// Kernel size (Conv, FFC).
    pub k: Option<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Window size (WTrans).
    pub window: Option<usize>,
    /// Group count (AFNO, AFFNet, FourierSR).
    pub rho: Option<usize>,
}

impl ComplexitySpec {
    pub fn new(kind: Kind, channels: usize, height: usize, width: usize) -> Self {
        ComplexitySpec {
            kind,
            k: None,
            channels,
            height,
            width,
            window: None,
            rho: None,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_window(mut self, m: usize) -> Self {
        self.window = Some(m);
        self
    }

    pub fn with_rho(mut self, rho: usize) -> Self {
        self.rho = Some(rho);
        self
    }

    /// Uses `hr / scale` as the layer extents.
    pub fn from_hr(kind: Kind, channels: usize, hr_height: usize, hr_width: usize, scale: usize) -> Result<Self> {
        if scale == 0 || !hr_height.is_multiple_of(scale) || !hr_width.is_multiple_of(scale) {
            return Err(Error::Config(format!(
                "HR {hr_height}x{hr_width} is not divisible by scale {scale}"
            )));
        }
        Ok(Self::new(kind, channels, hr_height / scale, hr_width / scale))
    }

    fn require(&self, field: Option<usize>, name: &str) -> Result<f64> {
        match field {
            Some(v) if v > 0 => Ok(v as f64),
            Some(_) => Err(Error::Config(format!("{} needs a positive {name}", self.kind))),
            None => Err(Error::Config(format!("{} needs {name}", self.kind))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("C, H and W must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub spec: ComplexitySpec,
    pub flops: f64,
    /// Closed-form count from the table above.
    pub params: f64,
    /// Count derived from tensor shapes, where one exists (FourierSR).
    pub shape_params: Option<f64>,
    pub formula_text: String,
}

impl CostReport {
    pub fn flops_g(&self) -> f64 {
        self.flops / 1e9
    }

    pub fn params_k(&self) -> f64 {
        self.params / 1e3
    }
}

fn fft_term(c: f64, h: f64, w: f64) -> f64 {
    2.0 * c * h * w * (h * w).log2()
}

pub fn flops_of(spec: &ComplexitySpec) -> Result<f64> {
    Ok(cost(spec)?.flops)
}

pub fn params_of(spec: &ComplexitySpec) -> Result<f64> {
    Ok(cost(spec)?.params)
}

/// Evaluates both formulas for `spec`.
pub fn cost(spec: &ComplexitySpec) -> Result<CostReport> {
    spec.validate()?;
    let (c, h, w) = (spec.channels as f64, spec.height as f64, spec.width as f64);
    let hw = h * w;
    let mut shape_params = None;
    let (flops, params, text) = match spec.kind {
        Kind::Conv => {
            let k = spec.require(spec.k, "k")?;
            (k * k * c * c * hw, k * k * c * c, "flops=k^2*C^2*H*W; params=k^2*C^2")
        }
        Kind::WTrans => {
            let m = spec.require(spec.window, "M")?;
            (
                4.0 * c * c * hw + 2.0 * m * m * c * hw,
                4.0 * c * c,
                "flops=4*C^2*H*W+2*M^2*C*H*W; params=4*C^2",
            )
        }
        Kind::Ffc => {
            let k = spec.require(spec.k, "k")?;
            (
                k * k * c * c * hw + fft_term(c, h, w),
                k * k * c * c,
                "flops=k^2*C^2*H*W+2*C*H*W*log2(H*W); params=k^2*C^2",
            )
        }
        Kind::GfNet => (
            c * hw + fft_term(c, h, w),
            c * hw,
            "flops=C*H*W+2*C*H*W*log2(H*W); params=C*H*W",
        ),
        Kind::Afno | Kind::AffNet => {
            let rho = spec.require(spec.rho, "rho")?;
            (
                8.0 * c * c * hw / rho + fft_term(c, h, w),
                (1.0 + 4.0 / rho) * c * c + 4.0 * c,
                "flops=8*C^2*H*W/rho+2*C*H*W*log2(H*W); params=(1+4/rho)*C^2+4*C",
            )
        }
        Kind::FourierSr => {
            let rho = spec.require(spec.rho, "rho")?;
            shape_params = Some(c * c / rho + 6.0 * c);
            (
                c * c * hw / rho + fft_term(c, h, w),
                (6.0 + rho) * c,
                "flops=C^2*H*W/rho+2*C*H*W*log2(H*W); params=(6+rho)*C; shape_params=C^2/rho+6*C",
            )
        }
    };
    Ok(CostReport {
        spec: spec.clone(),
        flops,
        params,
        shape_params,
        formula_text: text.to_string(),
    })
}

/// Percentage parameter and FLOPs overhead of `n_plugins` FourierSR blocks
/// (shape-derived parameter count) on a backbone.
pub fn plugin_overhead(
    backbone_params: f64,
    backbone_flops: f64,
    n_plugins: usize,
    spec: &ComplexitySpec,
) -> Result<(f64, f64)> {
    if backbone_params <= 0.0 || backbone_flops <= 0.0 {
        return Err(Error::Config("backbone budgets must be positive".into()));
    }
    let fsr = ComplexitySpec {
        kind: Kind::FourierSr,
        ..spec.clone()
    };
    let r = cost(&fsr)?;
    let n = n_plugins as f64;
    let params = r.shape_params.expect("fourier shape count");
    Ok((100.0 * n * params / backbone_params, 100.0 * n * r.flops / backbone_flops))
}

pub const BENCH_CSV_HEADER: &str = "kind,C,H,W,rho,k,M,flops_G,params_K,latency_ms";

pub const WARMUP_RUNS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub report: CostReport,
    pub repeats: usize,
    pub median_ms: f64,
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row in [`BENCH_CSV_HEADER`] order; `latency_ms` may be absent.
pub fn csv_row(report: &CostReport, latency_ms: Option<f64>) -> String {
    let s = &report.spec;
    format!(
        "{},{},{},{},{},{},{},{:.3},{:.3},{}",
        s.kind,
        s.channels,
        s.height,
        s.width,
        opt(s.rho),
        opt(s.k),
        opt(s.window),
        report.flops_g(),
        report.params_k(),
        latency_ms.map(|l| format!("{l:.3}")).unwrap_or_default()
    )
}

impl BenchResult {
    pub fn csv_row(&self) -> String {
        csv_row(&self.report, Some(self.median_ms))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time in milliseconds over `repeats` runs of one layer on a
/// random double-precision input, after [`WARMUP_RUNS`] untimed runs.
///
/// Implemented kinds: Conv (k = 3), WTrans (naive attention) and FourierSR.
pub fn bench(spec: &ComplexitySpec, repeats: usize, seed: u64) -> Result<BenchResult> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let report = cost(spec)?;
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Tensor = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-1.0..1.0));
    let mut weights = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-scale..scale)).collect() };

    let mut run: Box<dyn FnMut() -> Result<Tensor>> = match spec.kind {
        Kind::Conv => {
            if spec.k != Some(3) {
                return Err(Error::Capability(format!("conv bench implements k=3 only, got {:?}", spec.k)));
            }
            let wt = Tensor::new(&[c, c, 3, 3], weights(c * c * 9, 0.1))?;
            let b = Tensor::zeros(&[c]);
            Box::new(move || conv3x3_forward(&x, &wt, &b))
        }
        Kind::WTrans => {
            let norm = 1.0 / (c as f64).sqrt();
            let att = WindowAttention {
                channels: c,
                window: spec.window.expect("validated by cost"),
                wq: weights(c * c, norm),
                wk: weights(c * c, norm),
                wv: weights(c * c, norm),
                wo: weights(c * c, norm),
            };
            Box::new(move || Ok(att.forward(&x)))
        }
        Kind::FourierSr => {
            let p = FourierSRParams::random(c, spec.rho.expect("validated by cost"), false, &mut rng)?;
            Box::new(move || fourier_sr_forward(&x, &p))
        }
        other => return Err(Error::Capability(format!("no benchmark kernel for {other}"))),
    };
    for _ in 0..WARMUP_RUNS {
        std::hint::black_box(run()?);
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        std::hint::black_box(run()?);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchResult {
        report,
        repeats,
        median_ms: median(times),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(kind: Kind) -> ComplexitySpec {
        ComplexitySpec::new(kind, 64, 640, 360).with_k(3).with_window(8).with_rho(8)
    }

    #[test]
    fn reference_layer_costs() {
        let conv = cost(&table(Kind::Conv)).unwrap();
        assert_eq!(conv.params, 36_864.0);
        assert_eq!(conv.flops, 9.0 * 4096.0 * 230_400.0);
        assert_eq!(format!("{:.3}", conv.flops_g()), "8.493");
        let wt = cost(&table(Kind::WTrans)).unwrap();
        assert_eq!(wt.params, 16_384.0);
        assert_eq!(format!("{:.3}", wt.flops_g()), "5.662");
        let ours = cost(&table(Kind::FourierSr)).unwrap();
        assert_eq!(ours.params, 896.0);
        assert_eq!(ours.shape_params, Some(896.0));
        assert!((ours.flops_g() - 0.644).abs() / 0.644 < 0.01, "{}", ours.flops_g());
    }

    #[test]
    fn hr_extents_divide_by_scale() {
        let s = ComplexitySpec::from_hr(Kind::Conv, 64, 1280, 720, 2).unwrap();
        assert_eq!((s.height, s.width), (640, 360));
        assert!(ComplexitySpec::from_hr(Kind::Conv, 64, 1281, 720, 2).is_err());
    }

    #[test]
    fn flops_ordering_at_reference_size() {
        let f = |k| flops_of(&table(k)).unwrap();
        let ours = f(Kind::FourierSr);
        assert!(f(Kind::GfNet) < ours);
        for k in [Kind::Conv, Kind::WTrans, Kind::Ffc, Kind::Afno, Kind::AffNet] {
            assert!(ours < f(k), "{k}");
        }
        let p = |k| params_of(&table(k)).unwrap();
        for k in Kind::ALL.into_iter().filter(|&k| k != Kind::FourierSr) {
            assert!(p(Kind::FourierSr) < p(k), "{k}");
        }
    }

    #[test]
    fn shape_count_matches_constructed_params() {
        for (c, rho) in [(4, 1), (4, 2), (8, 4), (12, 3), (16, 16), (64, 8)] {
            let r = cost(&ComplexitySpec::new(Kind::FourierSr, c, 4, 4).with_rho(rho)).unwrap();
            let p = FourierSRParams::<f64>::plugin_init(c, rho).unwrap();
            assert_eq!(r.shape_params, Some(p.learnable_count() as f64));
        }
    }

    #[test]
    fn missing_fields_are_configuration_errors() {
        for kind in [Kind::Conv, Kind::WTrans, Kind::Ffc, Kind::Afno, Kind::FourierSr] {
            let spec = ComplexitySpec::new(kind, 8, 8, 8);
            assert!(matches!(cost(&spec), Err(Error::Config(_))), "{kind}");
        }
        assert!(cost(&ComplexitySpec::new(Kind::GfNet, 8, 8, 8)).is_ok());
        assert!(cost(&ComplexitySpec::new(Kind::GfNet, 0, 8, 8)).is_err());
    }

    #[test]
    fn overhead_is_linear_and_zero_without_plugins() {
        let spec = ComplexitySpec::new(Kind::FourierSr, 64, 320, 180).with_rho(8);
        assert_eq!(plugin_overhead(1518e3, 114.2e9, 0, &spec).unwrap(), (0.0, 0.0));
        let (p1, f1) = plugin_overhead(1518e3, 114.2e9, 1, &spec).unwrap();
        let (p16, f16) = plugin_overhead(1518e3, 114.2e9, 16, &spec).unwrap();
        assert!((p16 - 16.0 * p1).abs() < 1e-12 && (f16 - 16.0 * f1).abs() < 1e-12);
        assert!((p16 - 100.0 * 14_336.0 / 1518e3).abs() < 1e-12);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in Kind::ALL {
            assert_eq!(k.name().parse::<Kind>().unwrap(), k);
        }
        assert_eq!("Ours".parse::<Kind>().unwrap(), Kind::FourierSr);
        assert!("mlp".parse::<Kind>().is_err());
    }

    #[test]
    fn bench_single_repeat_and_capabilities() {
        let spec = ComplexitySpec::new(Kind::Conv, 4, 8, 8).with_k(3);
        let r = bench(&spec, 1, 0).unwrap();
        assert!(r.median_ms.is_finite() && r.median_ms > 0.0);
        assert_eq!(r.csv_row().split(',').count(), BENCH_CSV_HEADER.split(',').count());
        let gf = ComplexitySpec::new(Kind::GfNet, 4, 8, 8);
        assert!(matches!(bench(&gf, 1, 0), Err(Error::Capability(_))));
        assert!(matches!(bench(&spec.clone().with_k(5), 1, 0), Err(Error::Capability(_))));
        let fs = ComplexitySpec::new(Kind::FourierSr, 4, 8, 8).with_rho(2);
        assert!(bench(&fs, 2, 0).unwrap().median_ms > 0.0);
    }

    #[test]
    fn median_of_even_and_odd_counts() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
