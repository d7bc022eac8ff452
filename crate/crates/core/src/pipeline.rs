//! Stage sequencing for a full run:
//! partition → simplify → texgen → lines → optimize_tex → optimize_geo →
//! export.
//!
//! Outputs in `cfg.output`: `model.obj` (+ `.mtl`, `.png`), `stats.csv`,
//! `stats.txt`, `energy.csv`, `trajectory.txt` (optimized poses, TUM) and
//! `geometry.csv`.

use std::path::PathBuf;

use crate::config::{RunConfig, Stage};
use crate::error::{Error, Result};
use crate::geom::{Plane, Pose};
use crate::lines::{detect_all, extract_border_lines, match_borders};
use crate::mesh::TriMesh;
use crate::optimize_geo::{geometry_metrics, optimize_geometry, write_metrics_csv, GeoReport};
use crate::optimize_tex::{self, EnergyReport};
use crate::partition::{clusters_from_labels, default_target_clusters, merge_planes, partition};
use crate::scene_io::ply::save_cluster_colored;
use crate::scene_io::stats::{RunStats, StageClock};
use crate::scene_io::{load_frames, load_mesh, save_textured_mesh, TextureAtlas};
use crate::simplify::simplify_with_report;
use crate::texgen::{
    atlas_image, build_patches, compute_visibility, fill_unobserved, init_target_colors,
    prepare_images, select_keyframes, write_texel_csv,
};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stats: RunStats,
    /// Final (or last computed) mesh with cluster labels.
    pub mesh: TriMesh,
    pub planes: Vec<Plane>,
    pub poses: Vec<Pose>,
    pub energy: Option<EnergyReport>,
    pub geometry: Option<GeoReport>,
    pub stopped_after: Option<Stage>,
    pub obj_path: Option<PathBuf>,
}

/// Runs the pipeline on a pool of `cfg.threads` workers (all cores when 0).
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_stages(cfg))
}

fn stage<T>(clock: &mut StageClock, s: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {s}");
    clock.time(s.name(), f).map_err(|e| e.in_stage(s.name()))
}

fn run_stages(cfg: &RunConfig) -> Result<RunOutput> {
    let out_dir = &cfg.output;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut clock = StageClock::default();

    let (dense, frames) = clock
        .time("load", || -> Result<_> {
            let (mesh, dropped) = load_mesh(&cfg.mesh)?;
            if dropped > 0 {
                log::warn!("dropped {dropped} degenerate faces");
            }
            let frames = load_frames(&cfg.frames, &cfg.trajectory, &cfg.intrinsics)?;
            Ok((mesh, frames))
        })
        .map_err(|e| e.in_stage("load"))?;
    let mut stats = RunStats {
        input_vertices: dense.n_vertices(),
        input_faces: dense.n_faces(),
        keyframes: frames.len(),
        ..Default::default()
    };
    let finish = |clock: &StageClock, stats: &mut RunStats, mesh: &TriMesh| -> Result<()> {
        stats.result_vertices = mesh.n_vertices();
        stats.result_faces = mesh.n_faces();
        stats.stages = clock.stages.clone();
        stats.total_seconds = clock.total();
        stats.write(&out_dir.join("stats.csv"), &out_dir.join("stats.txt"))?;
        log::info!("\n{}", stats.to_table());
        Ok(())
    };

    // partition + merge
    let clusters = stage(&mut clock, Stage::Partition, || {
        let target = if cfg.target_clusters == 0 {
            default_target_clusters(dense.n_faces())
        } else {
            cfg.target_clusters
        };
        let raw = partition(&dense, target)?;
        let merged = merge_planes(&dense, &raw, &cfg.merge);
        log::info!(
            "{} clusters after merging ({} before)",
            merged.len(),
            raw.len()
        );
        Ok(merged)
    })?;
    let planes: Vec<Plane> = clusters.iter().map(|c| c.plane).collect();
    if cfg.dump_debug || cfg.stops_after(Stage::Partition) {
        let labeled = dense
            .clone()
            .with_labels(crate::partition::labels_from_clusters(
                dense.n_faces(),
                &clusters,
            ));
        save_cluster_colored(&labeled, &out_dir.join("partition.ply"))?;
        if cfg.stops_after(Stage::Partition) {
            finish(&clock, &mut stats, &labeled)?;
            return Ok(early(
                stats,
                labeled,
                planes,
                frames.poses(),
                Stage::Partition,
            ));
        }
    }

    // simplify
    let mut mesh = stage(&mut clock, Stage::Simplify, || {
        let (m, rep) = simplify_with_report(&dense, &clusters, &cfg.simplify)?;
        if rep.exhausted {
            log::warn!(
                "simplification stopped at {} faces (target {})",
                rep.output_faces,
                rep.target_faces
            );
        }
        Ok(m)
    })?;
    drop(dense);
    if cfg.dump_debug || cfg.stops_after(Stage::Simplify) {
        save_cluster_colored(&mesh, &out_dir.join("simplified.ply"))?;
        if cfg.stops_after(Stage::Simplify) {
            finish(&clock, &mut stats, &mesh)?;
            return Ok(early(stats, mesh, planes, frames.poses(), Stage::Simplify));
        }
    }

    // texgen
    let (frames, mut texels, images) = stage(&mut clock, Stage::Texgen, || {
        let frames = select_keyframes(frames, cfg.texgen.keyframe_interval)?;
        let labels = mesh.labels().expect("simplify keeps labels").to_vec();
        let mut simple_clusters = clusters_from_labels(&mesh, &labels);
        // keep the dense-mesh fits, which saw every input point
        for c in &mut simple_clusters {
            c.plane = planes[c.id as usize];
        }
        let mut texels = build_patches(
            &mesh,
            &simple_clusters,
            cfg.texgen.resolution,
            cfg.texgen.gutter,
        )?;
        compute_visibility(
            &mut texels,
            &planes,
            &frames,
            &frames.poses(),
            &cfg.texgen.visibility(),
        );
        let images = prepare_images(&frames);
        init_target_colors(
            &mut texels,
            &planes,
            &images,
            &frames.poses(),
            &frames.intrinsics,
        );
        log::info!("{} keyframes, {} texels", frames.len(), texels.len());
        Ok((frames, texels, images))
    })?;
    stats.keyframes = frames.len();
    let mut poses = frames.poses();
    let mut planes = planes;
    if cfg.dump_debug {
        write_texel_csv(&texels, &out_dir.join("texels.csv"))?;
    }
    if cfg.stops_after(Stage::Texgen) {
        fill_unobserved(
            &mut texels,
            &planes,
            &frames,
            &images,
            &poses,
            &cfg.texgen.visibility(),
        );
        atlas_image(&texels, cfg.texgen.gutter)
            .save(out_dir.join("texgen_atlas.png"))
            .map_err(|e| Error::Export(e.to_string()))?;
        finish(&clock, &mut stats, &mesh)?;
        return Ok(early(stats, mesh, planes, poses, Stage::Texgen));
    }

    // lines
    let corrs = stage(&mut clock, Stage::Lines, || {
        let labels = mesh.labels().expect("simplify keeps labels");
        let borders = extract_border_lines(&mesh, labels);
        let segments = detect_all(&frames, &cfg.lines);
        let corrs = match_borders(&borders, &planes, &segments, &frames, &poses, &cfg.lines);
        log::info!(
            "{} border lines, {} segments, {} correspondences",
            borders.len(),
            segments.iter().map(Vec::len).sum::<usize>(),
            corrs.len()
        );
        Ok(corrs)
    })?;
    if cfg.dump_debug || cfg.stops_after(Stage::Lines) {
        let mut s = String::from("border,frame,pixels,distance_px\n");
        for c in &corrs {
            s += &format!(
                "{},{},{},{:.4}\n",
                c.border,
                c.frame,
                c.pixels.len(),
                c.distance_px
            );
        }
        let p = out_dir.join("lines.csv");
        std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        if cfg.stops_after(Stage::Lines) {
            finish(&clock, &mut stats, &mesh)?;
            return Ok(early(stats, mesh, planes, poses, Stage::Lines));
        }
    }

    // texture, pose and plane optimization
    let energy = if cfg.skip_tex {
        fill_unobserved(
            &mut texels,
            &planes,
            &frames,
            &images,
            &poses,
            &cfg.texgen.visibility(),
        );
        None
    } else {
        let rep = stage(&mut clock, Stage::OptimizeTex, || {
            optimize_tex::solve(
                &mut texels,
                &frames,
                &images,
                &mut poses,
                &mut planes,
                &corrs,
                &cfg.optim_config(),
                false,
            )
        })?;
        rep.write_csv(&out_dir.join("energy.csv"))?;
        let ts: Vec<f64> = frames.frames.iter().map(|f| f.timestamp).collect();
        optimize_tex::write_tum(&poses, &ts, &out_dir.join("trajectory.txt"))?;
        Some(rep)
    };
    drop(images);
    if cfg.stops_after(Stage::OptimizeTex) {
        atlas_image(&texels, cfg.texgen.gutter)
            .save(out_dir.join("optimize_tex_atlas.png"))
            .map_err(|e| Error::Export(e.to_string()))?;
        finish(&clock, &mut stats, &mesh)?;
        let mut o = early(stats, mesh, planes, poses, Stage::OptimizeTex);
        o.energy = energy;
        return Ok(o);
    }

    // geometry
    let geometry = if cfg.skip_geo {
        None
    } else {
        let before = geometry_metrics(&mesh, &planes, cfg.geo.min_dihedral_deg)?;
        let rep = stage(&mut clock, Stage::OptimizeGeo, || {
            optimize_geometry(&mut mesh, &texels, &planes, &cfg.geo)
        })?;
        let after = geometry_metrics(&mesh, &planes, cfg.geo.min_dihedral_deg)?;
        write_metrics_csv(&before, &after, &out_dir.join("geometry.csv"))?;
        Some(rep)
    };
    if cfg.stops_after(Stage::OptimizeGeo) {
        save_cluster_colored(&mesh, &out_dir.join("optimize_geo.ply"))?;
        finish(&clock, &mut stats, &mesh)?;
        let mut o = early(stats, mesh, planes, poses, Stage::OptimizeGeo);
        o.energy = energy;
        o.geometry = geometry;
        return Ok(o);
    }

    // export
    let obj = out_dir.join("model.obj");
    stage(&mut clock, Stage::Export, || {
        let atlas = TextureAtlas::from_texels(&texels, cfg.texgen.gutter);
        save_textured_mesh(&mesh, &atlas, &obj)
    })?;
    finish(&clock, &mut stats, &mesh)?;
    Ok(RunOutput {
        stats,
        mesh,
        planes,
        poses,
        energy,
        geometry,
        stopped_after: None,
        obj_path: Some(obj),
    })
}

fn early(
    stats: RunStats,
    mesh: TriMesh,
    planes: Vec<Plane>,
    poses: Vec<Pose>,
    s: Stage,
) -> RunOutput {
    RunOutput {
        stats,
        mesh,
        planes,
        poses,
        energy: None,
        geometry: None,
        stopped_after: Some(s),
        obj_path: None,
    }
}
