use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use geocon::io::{read_ppm, write_pgm_mask, write_scalar_pfm, write_vector_pfm};
use geocon::optim::{
    neighbor_plane_depth, rms_angular_error_deg, rms_depth_error, step, total_loss, LossReport, OptimConfig,
    OptimState,
};
use geocon::synth::render_observed;
use geocon::{
    depth_weight_map, gradient_magnitude, mvgeo_loss, normal_from_depth, percentile_threshold, render_scene,
    sobel_gradients, svgeo_loss, texture_partition, trust_region, unbiased_depth, Error, MvReport, MvView,
    SceneSpec, SvInputs, SvLossReport,
};
use serde::Serialize;

use crate::bundle::{self, Bundle};
use crate::manifest::{SweepParam, ViewRecord};

/// What a command read and wrote, for the manifest.
#[derive(Default)]
pub struct Report {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub views: Option<Vec<ViewRecord>>,
    pub bundle_spec_hash: Option<String>,
    /// Iteration at which the loss stopped being finite.
    pub diverged_at: Option<usize>,
}

pub fn synth(spec: &SceneSpec, out: &Path) -> Result<Report> {
    let clean = render_scene(spec)?;
    let observed = render_observed(spec)?;
    let (records, outputs) = bundle::write_views(out, &observed, &clean)?;
    Ok(Report {
        outputs,
        views: Some(records),
        ..Default::default()
    })
}

#[derive(Debug, Serialize)]
pub struct PartitionStats {
    pub percentile: f64,
    pub tau: f64,
    pub rich_fraction: f64,
    pub rich_count: usize,
    pub less_count: usize,
    /// Every gradient magnitude is equal, so the threshold ties with all pixels.
    pub degenerate: bool,
}

pub fn partition(image: &Path, percentile: f64, out: &Path) -> Result<Report> {
    if !(percentile > 0.0 && percentile < 100.0) {
        bail!("percentile {percentile} is outside (0, 100)");
    }
    let img = read_ppm(image).with_context(|| format!("reading {}", image.display()))?;
    let (gx, gy) = sobel_gradients(&img)?;
    let g = gradient_magnitude(&gx, &gy)?;
    let tau = percentile_threshold(&g, percentile)?;
    let (rich, less) = texture_partition(&g, tau);
    let stats = PartitionStats {
        percentile,
        tau,
        rich_fraction: rich.fraction(),
        rich_count: rich.count(),
        less_count: less.count(),
        degenerate: g.max() == g.min(),
    };
    let paths = [out.join("rich.pgm"), out.join("less.pgm"), out.join("gradient.pfm"), out.join("stats.json")];
    write_pgm_mask(&paths[0], &rich)?;
    write_pgm_mask(&paths[1], &less)?;
    write_scalar_pfm(&paths[2], &g)?;
    write_json(&paths[3], &stats)?;
    Ok(Report {
        inputs: vec![image.to_path_buf()],
        outputs: paths.to_vec(),
        ..Default::default()
    })
}

#[derive(Debug, Serialize)]
pub struct ViewLoss {
    pub view: usize,
    pub neighbor: Option<usize>,
    pub sv: SvLossReport,
    pub tau: f64,
    pub n_trust: usize,
    pub n_rich: usize,
    pub n_less: usize,
    pub mv: Option<MvReport>,
}

#[derive(Debug, Serialize)]
pub struct LossDocument {
    pub views: Vec<ViewLoss>,
    pub svgeo_total: f64,
    pub mvgeo_total: f64,
}

/// Losses of the bundle as stored: `D̂` from the stored plane offsets and normals,
/// `N_d` from the stored depth. View `k` is paired with `(k + 1) mod V`.
pub fn evaluate_bundle(b: &Bundle, cfg: &OptimConfig) -> Result<LossDocument> {
    cfg.validate()?;
    let n = b.views.len();
    let unbiased: Vec<_> = b
        .views
        .iter()
        .map(|v| unbiased_depth(&v.plane_distance, &v.normals, &v.cam).map(|u| u.depth))
        .collect::<geocon::Result<_>>()?;
    let mut views = Vec::new();
    for (k, v) in b.views.iter().enumerate() {
        let nd = normal_from_depth(&v.depth, &v.cam)?.normals;
        let inputs = SvInputs {
            image: &v.rgb,
            depth: &v.depth,
            unbiased: &unbiased[k],
            normals: &v.normals,
            depth_normals: &nd,
        };
        let sv = svgeo_loss(&inputs, &cfg.sv)?;
        let regions = geocon::sv_loss::SvRegions::compute(&inputs, &cfg.sv)?;
        let neighbor = (n > 1).then_some((k + 1) % n);
        let mv = match neighbor {
            Some(m) if cfg.mv.s > 0 => {
                let view = |i: usize| MvView {
                    depth: &b.views[i].depth,
                    rendered: &b.views[i].depth,
                    unbiased: &unbiased[i],
                    cam: &b.views[i].cam,
                };
                Some(mvgeo_loss(&view(k), &view(m), &cfg.mv)?.report)
            }
            _ => None,
        };
        views.push(ViewLoss {
            view: k,
            neighbor,
            sv,
            tau: regions.tau,
            n_trust: regions.trust.count(),
            n_rich: regions.rich.count(),
            n_less: regions.less.count(),
            mv,
        });
    }
    Ok(LossDocument {
        svgeo_total: views.iter().map(|v| v.sv.l_svgeo).sum(),
        mvgeo_total: views.iter().filter_map(|v| v.mv.map(|m| m.loss)).sum(),
        views,
    })
}

pub fn loss(dir: &Path, cfg: &OptimConfig, out: Option<&Path>) -> Result<Report> {
    let b = bundle::load(dir)?;
    let doc = evaluate_bundle(&b, cfg)?;
    let text = serde_json::to_string_pretty(&doc)?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    let mut outputs = Vec::new();
    if let Some(out) = out {
        let p = out.join("loss.json");
        fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
        outputs.push(p);
    }
    Ok(Report {
        inputs: b.files,
        outputs,
        bundle_spec_hash: Some(b.spec_hash),
        ..Default::default()
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Rms {
    pub initial: f64,
    #[serde(rename = "final")]
    pub last: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub iterations: usize,
    pub final_loss: Option<LossReport>,
    pub normal_rms_deg: Rms,
    pub depth_rms: Rms,
    pub normal_rms_reduction: f64,
    pub diverged_at: Option<usize>,
    pub last_good_iteration: usize,
}

/// Result of one optimizer run on a bundle.
pub struct Optimized {
    pub state: OptimState,
    pub final_loss: Option<LossReport>,
    pub diverged_at: Option<usize>,
    pub normal_rms_deg: Rms,
    pub depth_rms: Rms,
}

pub fn optimize_bundle(b: &Bundle, cfg: &OptimConfig) -> Result<Optimized> {
    cfg.validate()?;
    let obs = b.observations();
    let mut state = OptimState::from_observations(&obs)?;
    let n0 = rms_angular_error_deg(&state.normals, &b.gt_normals);
    let d0 = rms_depth_error(&state.depths(), &b.gt_depth);
    let mut diverged_at = None;
    for _ in 0..cfg.iterations {
        match step(&state, &obs, cfg) {
            Ok(next) => state = next,
            Err(Error::Divergence { iteration }) => {
                diverged_at = Some(iteration);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let final_loss = match diverged_at {
        None => {
            let r = total_loss(&state, &obs, cfg)?;
            if r.total.is_finite() {
                Some(r)
            } else {
                diverged_at = Some(state.iteration);
                None
            }
        }
        Some(_) => None,
    };
    Ok(Optimized {
        normal_rms_deg: Rms {
            initial: n0,
            last: rms_angular_error_deg(&state.normals, &b.gt_normals),
        },
        depth_rms: Rms {
            initial: d0,
            last: rms_depth_error(&state.depths(), &b.gt_depth),
        },
        state,
        final_loss,
        diverged_at,
    })
}

pub fn optimize(dir: &Path, cfg: &OptimConfig, out: &Path) -> Result<Report> {
    let b = bundle::load(dir)?;
    let run = optimize_bundle(&b, cfg)?;
    let mut outputs = Vec::new();
    let history = out.join("history.csv");
    let mut csv = String::from(LossReport::CSV_HEADER);
    csv.push('\n');
    for r in &run.state.history {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(&history, csv).with_context(|| format!("writing {}", history.display()))?;
    outputs.push(history);
    for k in 0..b.views.len() {
        let d = out.join(format!("final_view{k}_depth.pfm"));
        let n = out.join(format!("final_view{k}_normals.pfm"));
        write_scalar_pfm(&d, &run.state.depth(k))?;
        write_vector_pfm(&n, &run.state.normals[k])?;
        outputs.extend([d, n]);
    }
    let summary = Summary {
        iterations: run.state.history.len(),
        final_loss: run.final_loss,
        normal_rms_deg: run.normal_rms_deg,
        depth_rms: run.depth_rms,
        normal_rms_reduction: reduction(run.normal_rms_deg),
        diverged_at: run.diverged_at,
        last_good_iteration: run.state.iteration,
    };
    let p = out.join("summary.json");
    write_json(&p, &summary)?;
    outputs.push(p);
    Ok(Report {
        inputs: b.files,
        outputs,
        bundle_spec_hash: Some(b.spec_hash),
        diverged_at: run.diverged_at,
        ..Default::default()
    })
}

fn reduction(r: Rms) -> f64 {
    if r.initial > 0.0 {
        1.0 - r.last / r.initial
    } else {
        0.0
    }
}

pub fn apply_param(cfg: &mut OptimConfig, param: SweepParam, value: f64) -> Result<()> {
    match param {
        SweepParam::Theta => cfg.sv.theta = value,
        SweepParam::Percentile => cfg.sv.percentile = value,
        SweepParam::Lambda3 => cfg.mv.lambda3 = value,
        SweepParam::S => {
            if !(value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                bail!("S must be a non-negative integer, got {value}");
            }
            cfg.mv.s = value as usize;
        }
    }
    cfg.validate()?;
    Ok(())
}

/// Size of the trust region `ℋ`, summed over views, at the initial optimizer state.
pub fn initial_trust_count(b: &Bundle, cfg: &OptimConfig) -> Result<usize> {
    let mut count = 0;
    for v in &b.views {
        let ub = neighbor_plane_depth(&v.depth, &v.normals, &v.cam)?;
        count += trust_region(&depth_weight_map(&v.depth, &ub)?, cfg.sv.theta).count();
    }
    Ok(count)
}

pub const SWEEP_HEADER: &str = "param,value,total,data,svn,cross,tv,mvgeo,normal_rms_initial,normal_rms_final,\
depth_rms_initial,depth_rms_final,trust_count,wall_time_s";

pub fn sweep(
    dir: &Path,
    base: &OptimConfig,
    param: SweepParam,
    values: &[f64],
    repeats: usize,
    out: &Path,
) -> Result<Report> {
    if values.is_empty() {
        bail!("--values must list at least one value");
    }
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let b = bundle::load(dir)?;
    let mut configs = Vec::new();
    for &v in values {
        let mut cfg = *base;
        apply_param(&mut cfg, param, v)?;
        if param == SweepParam::S {
            cfg.multi_view = cfg.mv.s > 0;
        }
        configs.push(cfg);
    }
    // Untimed warm-up, then repeats interleaved across values so drift is shared.
    optimize_bundle(&b, &configs[0])?;
    let mut best = vec![f64::INFINITY; configs.len()];
    let mut runs: Vec<Option<Optimized>> = configs.iter().map(|_| None).collect();
    for _ in 0..repeats {
        for (k, cfg) in configs.iter().enumerate() {
            let t = Instant::now();
            let r = optimize_bundle(&b, cfg)?;
            best[k] = best[k].min(t.elapsed().as_secs_f64());
            runs[k] = Some(r);
        }
    }
    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut diverged_at = None;
    for (k, (cfg, &v)) in configs.iter().zip(values).enumerate() {
        let best = best[k];
        let run = runs[k].take().expect("repeats >= 1");
        diverged_at = diverged_at.or(run.diverged_at);
        let l = run.final_loss.unwrap_or(LossReport {
            total: f64::NAN,
            data: f64::NAN,
            svn: f64::NAN,
            cross: f64::NAN,
            tv: f64::NAN,
            mvgeo: f64::NAN,
            ..Default::default()
        });
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            param.name(),
            v,
            l.total,
            l.data,
            l.svn,
            l.cross,
            l.tv,
            l.mvgeo,
            run.normal_rms_deg.initial,
            run.normal_rms_deg.last,
            run.depth_rms.initial,
            run.depth_rms.last,
            initial_trust_count(&b, cfg)?,
            best
        ));
    }
    let p = out.join("sweep.csv");
    fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
    Ok(Report {
        inputs: b.files,
        outputs: vec![p],
        bundle_spec_hash: Some(b.spec_hash),
        diverged_at,
        ..Default::default()
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
