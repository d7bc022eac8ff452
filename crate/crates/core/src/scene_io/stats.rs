//! Run statistics in the layout of the usual results table: input |V|, |F|,
//! keyframe count |K|, result |V|, |F| and wall time.

use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub input_vertices: usize,
    pub input_faces: usize,
    pub keyframes: usize,
    pub result_vertices: usize,
    pub result_faces: usize,
    /// Stage name and wall time in seconds, in execution order.
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

impl RunStats {
    pub fn vertex_ratio(&self) -> f64 {
        ratio(self.result_vertices, self.input_vertices)
    }

    pub fn face_ratio(&self) -> f64 {
        ratio(self.result_faces, self.input_faces)
    }

    pub fn stage_sum(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut head = vec![
            "input_vertices",
            "input_faces",
            "keyframes",
            "result_vertices",
            "result_faces",
            "vertex_ratio_pct",
            "face_ratio_pct",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        head.extend(self.stages.iter().map(|(n, _)| format!("{n}_s")));
        head.push("total_s".into());
        let mut row = vec![
            self.input_vertices.to_string(),
            self.input_faces.to_string(),
            self.keyframes.to_string(),
            self.result_vertices.to_string(),
            self.result_faces.to_string(),
            format!("{:.2}", 100.0 * self.vertex_ratio()),
            format!("{:.2}", 100.0 * self.face_ratio()),
        ];
        row.extend(self.stages.iter().map(|(_, t)| seconds(*t)));
        row.push(seconds(self.total_seconds));
        format!("{}\n{}\n", head.join(","), row.join(","))
    }

    /// Human-readable table, columns right-aligned.
    pub fn to_table(&self) -> String {
        let head = ["", "|V|", "|F|", "|K|", "t (s)"];
        let rows = [
            [
                "input".to_string(),
                format_count(self.input_vertices),
                format_count(self.input_faces),
                self.keyframes.to_string(),
                String::new(),
            ],
            [
                "result".to_string(),
                format_count(self.result_vertices),
                format_count(self.result_faces),
                String::new(),
                seconds(self.total_seconds),
            ],
            [
                "ratio".to_string(),
                percent(self.vertex_ratio()),
                percent(self.face_ratio()),
                String::new(),
                String::new(),
            ],
        ];
        let mut width = head.map(str::len);
        for r in &rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[&str]| {
            let mut s = format!("{:<w$}", cells[0], w = width[0]);
            for (c, w) in cells[1..].iter().zip(&width[1..]) {
                s += &format!("  {c:>w$}");
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&head);
        for r in &rows {
            out += &line(&r.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let sw = self.stages.iter().map(|s| s.0.len()).max().unwrap_or(0);
        out += "\n";
        for (n, t) in &self.stages {
            out += &format!("{n:<sw$}  {:>9}\n", seconds(*t));
        }
        out
    }

    pub fn write(&self, csv_path: &Path, table_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(table_path, self.to_table()).map_err(|e| Error::io(table_path, e))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn seconds(t: f64) -> String {
    format!("{t:.3}")
}

pub fn percent(r: f64) -> String {
    format!("{:.2}%", 100.0 * r)
}

/// Three significant digits with a K/M suffix: 3700000 → "3.70M",
/// 55200 → "55.2K", 895 → "895".
pub fn format_count(n: usize) -> String {
    let x = n as f64;
    let (v, suffix) = if x >= 1e6 {
        (x / 1e6, "M")
    } else if x >= 1e3 {
        (x / 1e3, "K")
    } else {
        return n.to_string();
    };
    let digits = if v >= 100.0 {
        0
    } else if v >= 10.0 {
        1
    } else {
        2
    };
    format!("{v:.digits$}{suffix}")
}

/// Wall-clock stage timer feeding [`RunStats::stages`].
#[derive(Debug)]
pub struct StageClock {
    start: Instant,
    pub stages: Vec<(String, f64)>,
}

impl Default for StageClock {
    fn default() -> Self {
        StageClock {
            start: Instant::now(),
            stages: Vec::new(),
        }
    }
}

impl StageClock {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.stages
            .push((name.to_string(), t0.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
