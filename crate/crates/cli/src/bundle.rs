//! Reading and writing view-bundle directories.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geocon::io::{read_ppm, read_scalar_pfm, read_vector_pfm, write_ppm, write_scalar_pfm, write_vector_pfm};
use geocon::optim::Observation;
use geocon::{ScalarField, VectorField, ViewBundle};

use crate::manifest::{RunManifest, ViewRecord, MANIFEST};

/// Writes observed views (and clean ones when they differ) into `dir`.
pub fn write_views(dir: &Path, observed: &[ViewBundle], clean: &[ViewBundle]) -> Result<(Vec<ViewRecord>, Vec<PathBuf>)> {
    let mut records = Vec::new();
    let mut files = Vec::new();
    for (k, (obs, gt)) in observed.iter().zip(clean).enumerate() {
        let name = |what: &str| format!("view{k}_{what}");
        let rgb = name("rgb.ppm");
        let depth = name("depth.pfm");
        let plane_distance = name("plane_distance.pfm");
        let normals = name("normals.pfm");
        write_ppm(dir.join(&rgb), &obs.rgb)?;
        write_scalar_pfm(dir.join(&depth), &obs.depth)?;
        write_scalar_pfm(dir.join(&plane_distance), &obs.plane_distance)?;
        write_vector_pfm(dir.join(&normals), &obs.normals)?;
        files.extend([&rgb, &depth, &plane_distance, &normals].map(|f| dir.join(f)));
        let (gt_depth, gt_normals) = if obs == gt {
            (depth.clone(), normals.clone())
        } else {
            let (d, n) = (format!("gt_{depth}"), format!("gt_{normals}"));
            write_scalar_pfm(dir.join(&d), &gt.depth)?;
            write_vector_pfm(dir.join(&n), &gt.normals)?;
            files.extend([dir.join(&d), dir.join(&n)]);
            (d, n)
        };
        records.push(ViewRecord {
            camera: obs.cam,
            rgb,
            depth,
            plane_distance,
            normals,
            gt_depth,
            gt_normals,
        });
    }
    Ok((records, files))
}

/// A loaded bundle directory.
pub struct Bundle {
    pub views: Vec<ViewBundle>,
    pub gt_depth: Vec<ScalarField>,
    pub gt_normals: Vec<VectorField>,
    pub spec_hash: String,
    pub files: Vec<PathBuf>,
}

impl Bundle {
    pub fn observations(&self) -> Vec<Observation> {
        self.views.iter().map(Observation::from).collect()
    }
}

pub fn load(dir: &Path) -> Result<Bundle> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        bail!("missing bundle manifest {}", manifest_path.display());
    }
    let manifest = RunManifest::read(&manifest_path)?;
    let Some(records) = manifest.views else {
        bail!("{} does not describe a view bundle", manifest_path.display());
    };
    if records.is_empty() {
        bail!("{} lists no views", manifest_path.display());
    }
    let mut missing = Vec::new();
    for r in &records {
        for f in [&r.rgb, &r.depth, &r.plane_distance, &r.normals, &r.gt_depth, &r.gt_normals] {
            let p = dir.join(f);
            if !p.is_file() && !missing.contains(&p) {
                missing.push(p);
            }
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| format!("  {}", p.display())).collect();
        bail!("missing bundle files:\n{}", list.join("\n"));
    }
    let mut files = vec![manifest_path];
    let mut views = Vec::new();
    let (mut gt_depth, mut gt_normals) = (Vec::new(), Vec::new());
    for r in &records {
        let ctx = |f: &String| format!("reading {}", dir.join(f).display());
        let view = ViewBundle {
            rgb: read_ppm(dir.join(&r.rgb)).with_context(|| ctx(&r.rgb))?,
            depth: read_scalar_pfm(dir.join(&r.depth)).with_context(|| ctx(&r.depth))?,
            plane_distance: read_scalar_pfm(dir.join(&r.plane_distance)).with_context(|| ctx(&r.plane_distance))?,
            normals: unit(read_vector_pfm(dir.join(&r.normals)).with_context(|| ctx(&r.normals))?),
            cam: r.camera,
        };
        gt_depth.push(read_scalar_pfm(dir.join(&r.gt_depth)).with_context(|| ctx(&r.gt_depth))?);
        gt_normals.push(unit(read_vector_pfm(dir.join(&r.gt_normals)).with_context(|| ctx(&r.gt_normals))?));
        for f in [&r.rgb, &r.depth, &r.plane_distance, &r.normals, &r.gt_depth, &r.gt_normals] {
            if !files.contains(&dir.join(f)) {
                files.push(dir.join(f));
            }
        }
        views.push(view);
    }
    Ok(Bundle {
        views,
        gt_depth,
        gt_normals,
        spec_hash: manifest.spec_hash,
        files,
    })
}

/// PFM stores `f32`; renormalize so decoded normals are unit to `f64` precision.
fn unit(mut field: VectorField) -> VectorField {
    for n in field.data_mut() {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        }
    }
    field
}
