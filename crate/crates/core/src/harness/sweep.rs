//! FER-versus-SNR sweeps over held-out channels.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use super::baseline::perfect_icsi_precoder;
use super::config::{ExperimentConfig, Scheme};
use super::data::{derive_seed, gen_heldout};
use crate::channel::DdChannel;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::link::{
    fer_theory, mmse_equalizer, noise_variance_from_snr_db, simulate_frames, zf_equalizer,
    Equalizer, McEstimate, Precoder,
};
use crate::net::{predict, NetworkParams};

pub const CSV_HEADER: &str = "scheme,snr_db,fer,ci95,n_frames,seed";

/// Pooled frames must contain more than this many errors before a point is
/// considered resolved.
pub const MIN_ERRORS: u64 = 10;

const SWEEP_DOMAIN: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub fer: f64,
    pub ci95: f64,
    /// Frames simulated; 0 for closed-form rows.
    pub n_frames: u64,
    pub seed: u64,
}

impl SweepRow {
    /// A simulated row that hit the frame cap before collecting more than
    /// [`MIN_ERRORS`] errors. Its `fer` is then an upper estimate: the raw
    /// rate, or `3/n_frames` when no error was seen.
    pub fn censored(&self) -> bool {
        self.n_frames > 0 && self.fer * self.n_frames as f64 <= MIN_ERRORS as f64 + 1e-6
    }

    fn from_estimate(scheme: Scheme, snr_db: f64, est: McEstimate, seed: u64) -> Self {
        let fer = if est.errors == 0 {
            3.0 / est.frames as f64
        } else {
            est.fer
        };
        Self {
            scheme,
            snr_db,
            fer,
            ci95: est.ci95,
            n_frames: est.frames,
            seed,
        }
    }
}

/// One channel's transmit/receive chain. `None` stands for a channel the
/// receiver cannot invert, whose frames all count as errors.
struct Chain<'a> {
    h: &'a DdChannel<f64>,
    link: Option<(Precoder<f64>, Equalizer<f64>)>,
}

/// Pools Monte Carlo frames over all chains, doubling the count until more
/// than [`MIN_ERRORS`] errors are seen or `max_frames` is reached.
fn adaptive_fer(
    chains: &[Chain<'_>],
    sigma2: f64,
    c: &Constellation<f64>,
    n_frames: u64,
    max_frames: u64,
    seed: u64,
) -> Result<McEstimate> {
    let n_ch = chains.len() as u64;
    let mut per_channel = n_frames.div_ceil(n_ch);
    let mut total = McEstimate::from_counts(0, 0);
    for round in 0u64.. {
        let room = max_frames.saturating_sub(total.frames) / n_ch;
        let batch = per_channel.min(room);
        if batch == 0 {
            break;
        }
        for (i, ch) in chains.iter().enumerate() {
            let est = match &ch.link {
                Some((p, e)) => {
                    let s = derive_seed(seed, &[i as u64, round]);
                    simulate_frames(e, ch.h, ch.h, p, sigma2, c, batch, s)?
                }
                None => McEstimate::from_counts(batch, batch),
            };
            total = total.merge(est);
        }
        if total.errors > MIN_ERRORS {
            break;
        }
        // after the first round every round doubles the total
        per_channel = total.frames / n_ch;
    }
    Ok(total)
}

fn check_model(cfg: &ExperimentConfig, params: &NetworkParams<f64>) -> Result<()> {
    let s = params.shape();
    if s.m != cfg.grid.m || s.n != cfg.grid.n || s.k != cfg.link.streams || s.tau != cfg.link.tau {
        return Err(Error::Config(format!(
            "model shape M={} N={} K={} tau={} does not match the configuration",
            s.m, s.n, s.k, s.tau
        )));
    }
    Ok(())
}

/// Evaluates every configured scheme at every configured SNR over
/// `data.test_channels` held-out channels. Rows come out grouped by SNR, in
/// the order of `sweep.schemes`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    model: Option<&NetworkParams<f64>>,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let sw = &cfg.sweep;
    let needs_model = sw.schemes.iter().any(|s| s.needs_model());
    let heldout = gen_heldout(cfg, seed)?;
    let p0 = cfg.power_budget();
    let grid = cfg.grid;
    let channels: Vec<DdChannel<f64>> = (0..heldout.len())
        .map(|i| DdChannel::new(grid, heldout.target(i).clone()))
        .collect::<Result<_>>()?;

    let ddcl_precoders = match (needs_model, model) {
        (false, _) => Vec::new(),
        (true, None) => {
            return Err(Error::Config(
                "schemes ddcl/ddcl_theory need a trained model checkpoint (--model)".into(),
            ))
        }
        (true, Some(params)) => {
            check_model(cfg, params)?;
            (0..heldout.len())
                .into_par_iter()
                .map(|i| predict(params, &heldout.history(i), p0))
                .collect::<Result<Vec<_>>>()?
        }
    };

    let c = cfg.constellation();
    let cb = cfg.baseline_constellation();
    let mn = grid.mn();
    let mut rows = Vec::new();
    for &snr in &sw.snr_grid_db {
        let sigma2: f64 = noise_variance_from_snr_db(snr);
        for &scheme in &sw.schemes {
            let point_seed = derive_seed(seed, &[SWEEP_DOMAIN, scheme as u64, snr.to_bits()]);
            let row = match scheme {
                Scheme::DdclTheory => {
                    let sum = channels
                        .par_iter()
                        .zip(&ddcl_precoders)
                        .map(|(h, p)| fer_theory(h, None, p, sigma2, &c))
                        .collect::<Result<Vec<f64>>>()?
                        .iter()
                        .sum::<f64>();
                    SweepRow {
                        scheme,
                        snr_db: snr,
                        fer: sum / channels.len() as f64,
                        ci95: 0.0,
                        n_frames: 0,
                        seed,
                    }
                }
                _ => {
                    let (precoders, constellation): (Vec<Precoder<f64>>, &Constellation<f64>) =
                        match scheme {
                            Scheme::Ddcl => (ddcl_precoders.clone(), &c),
                            Scheme::PerfectIcsi => (
                                channels
                                    .par_iter()
                                    .map(|h| {
                                        perfect_icsi_precoder(
                                            h,
                                            sigma2,
                                            &c,
                                            p0,
                                            cfg.link.streams,
                                            sw.icsi_iters,
                                        )
                                        .map(|r| r.precoder)
                                    })
                                    .collect::<Result<_>>()?,
                                &c,
                            ),
                            _ => (vec![Precoder::scaled_identity(mn, p0); channels.len()], &cb),
                        };
                    let chains = channels
                        .iter()
                        .zip(precoders)
                        .map(|(h, p)| {
                            let e = if scheme == Scheme::ZfBaseline {
                                zf_equalizer(h, &p)
                            } else {
                                mmse_equalizer(h, &p, sigma2)
                            };
                            match e {
                                Ok(e) => Ok(Chain {
                                    h,
                                    link: Some((p, e)),
                                }),
                                Err(Error::SingularChannel(_)) => Ok(Chain { h, link: None }),
                                Err(e) => Err(e),
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let est = adaptive_fer(
                        &chains,
                        sigma2,
                        constellation,
                        sw.n_frames_per_point,
                        sw.max_frames_per_point,
                        point_seed,
                    )?;
                    SweepRow::from_estimate(scheme, snr, est, seed)
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_csv(w: &mut impl Write, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.scheme.name(),
            r.snr_db,
            r.fer,
            r.ci95,
            r.n_frames,
            r.seed
        )?;
    }
    Ok(())
}

pub fn read_csv(r: impl BufRead) -> Result<Vec<SweepRow>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(Error::Format(format!("expected CSV header `{CSV_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {}: bad {what}", n + 2));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        rows.push(SweepRow {
            scheme: Scheme::from_name(f[0]).ok_or_else(|| bad("scheme"))?,
            snr_db: f[1].parse().map_err(|_| bad("snr_db"))?,
            fer: f[2].parse().map_err(|_| bad("fer"))?,
            ci95: f[3].parse().map_err(|_| bad("ci95"))?,
            n_frames: f[4].parse().map_err(|_| bad("n_frames"))?,
            seed: f[5].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetShape;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            "[grid]\nm = 4\nn = 2\n[channel]\nl_max = 3\nk_max = 1\n[link]\nstreams = 8\ntau = 2\n\
             [data]\ntest_channels = 6\n[sweep]\nsnr_grid_db = [0.0, 10.0]\n\
             n_frames_per_point = 3000\nmax_frames_per_point = 60000\nicsi_iters = 20\n",
        )
        .unwrap()
    }

    fn model(cfg: &ExperimentConfig) -> NetworkParams<f64> {
        NetworkParams::init(
            NetShape::new(cfg.grid.m, cfg.grid.n, cfg.link.streams, cfg.link.tau).unwrap(),
            5,
        )
    }

    #[test]
    fn rows_are_complete_and_reproducible() {
        let cfg = small_cfg();
        let m = model(&cfg);
        let rows = run_sweep(&cfg, Some(&m), 4).unwrap();
        assert_eq!(rows.len(), 10);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.fer) && r.ci95 >= 0.0, "{r:?}");
            if r.scheme != Scheme::DdclTheory {
                assert!(r.n_frames >= 3000);
                assert!(r.censored() || r.fer * r.n_frames as f64 > 10.0);
            }
        }
        let mut a = Vec::new();
        write_csv(&mut a, &rows).unwrap();
        let mut b = Vec::new();
        write_csv(&mut b, &run_sweep(&cfg, Some(&m), 4).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_csv(a.as_slice()).unwrap(), rows);
    }

    #[test]
    fn theory_rows_average_the_closed_form() {
        let cfg = small_cfg();
        let m = model(&cfg);
        let rows = run_sweep(&cfg, Some(&m), 11).unwrap();
        let heldout = gen_heldout(&cfg, 11).unwrap();
        let c = cfg.constellation();
        for pair in rows.chunks(5) {
            let (sim, theory) = (&pair[0], &pair[1]);
            assert_eq!(
                (sim.scheme, theory.scheme),
                (Scheme::Ddcl, Scheme::DdclTheory)
            );
            let sigma2 = noise_variance_from_snr_db(theory.snr_db);
            let want = (0..heldout.len())
                .map(|i| {
                    let h = DdChannel::new(cfg.grid, heldout.target(i).clone()).unwrap();
                    let p = predict(&m, &heldout.history(i), 8.0).unwrap();
                    fer_theory(&h, None, &p, sigma2, &c).unwrap()
                })
                .sum::<f64>()
                / heldout.len() as f64;
            assert!((theory.fer - want).abs() < 1e-12);
            // Gaussian interference is the worst case, so simulation never
            // lands clearly above the closed form
            assert!(sim.fer <= theory.fer + 3.0 * sim.ci95, "{sim:?} {theory:?}");
        }
        // noise-limited point: the two agree
        assert!((rows[0].fer - rows[1].fer).abs() <= 3.0 * rows[0].ci95);
    }

    #[test]
    fn missing_model_is_a_config_error() {
        let cfg = small_cfg();
        let err = run_sweep(&cfg, None, 1).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("checkpoint")));
        let mut only = cfg.clone();
        only.sweep.schemes = vec![Scheme::MmseBaseline];
        assert_eq!(run_sweep(&only, None, 1).unwrap().len(), 2);
        let mut other = cfg.clone();
        other.link.streams = 4;
        assert!(matches!(
            run_sweep(&other, Some(&model(&cfg)), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn frame_cap_censors_rows() {
        let mut cfg = small_cfg();
        cfg.sweep.schemes = vec![Scheme::MmseBaseline];
        cfg.sweep.snr_grid_db = vec![60.0];
        cfg.sweep.n_frames_per_point = 600;
        cfg.sweep.max_frames_per_point = 2400;
        let rows = run_sweep(&cfg, None, 2).unwrap();
        assert_eq!(rows[0].n_frames, 2400);
        assert!(rows[0].censored());
        assert_eq!(rows[0].fer, 3.0 / 2400.0);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(read_csv("a,b\n".as_bytes()).is_err());
        let text = format!("{CSV_HEADER}\nddcl,1,0.5,0.1,10\n");
        assert!(read_csv(text.as_bytes()).is_err());
        let text = format!("{CSV_HEADER}\nfoo,1,0.5,0.1,10,1\n");
        assert!(read_csv(text.as_bytes()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trips(
            raw in proptest::collection::vec(
                (0usize..5, -50.0f64..50.0, 0.0f64..=1.0, 0.0f64..1.0, proptest::num::u64::ANY, proptest::num::u64::ANY),
                0..20,
            )
        ) {
            let rows: Vec<SweepRow> = raw
                .into_iter()
                .map(|(s, snr_db, fer, ci95, n_frames, seed)| SweepRow {
                    scheme: Scheme::ALL[s],
                    snr_db,
                    fer,
                    ci95,
                    n_frames,
                    seed,
                })
                .collect();
            let mut buf = Vec::new();
            write_csv(&mut buf, &rows).unwrap();
            proptest::prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
        }
    }
}
