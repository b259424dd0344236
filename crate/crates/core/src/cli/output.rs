//! Number formatting and artifact writing shared by all commands.
//!
//! Every float leaves the program as `{:.16e}`: 17 significant digits, which
//! round-trips any finite double exactly. Non-finite values are written as
//! `inf`, `-inf` or `nan` in tables and as `null` in JSON.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Pretty JSON whose floats use [`num`].
struct SciFormatter(PrettyFormatter<'static>);

impl Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(num(v).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, SciFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report types serialize infallibly");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Comma-separated table with a header row.
#[derive(Debug, Default)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Record of one command invocation, written as `manifest.json` next to the
/// artifacts it lists.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub started_unix_seconds: f64,
    pub wall_seconds: f64,
    pub version: String,
}

/// Collects artifacts for an optional output directory.
pub struct Artifacts {
    dir: Option<PathBuf>,
    written: Vec<String>,
    started: Instant,
    started_unix: f64,
}

impl Artifacts {
    pub fn new(dir: Option<&Path>) -> io::Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Artifacts {
            dir: dir.map(Path::to_path_buf),
            written: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
        })
    }

    pub fn enabled(&self) -> bool {
        self.dir.is_some()
    }

    /// Writes `name` under the output directory; no-op without one.
    pub fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        if let Some(d) = &self.dir {
            fs::write(d.join(name), contents)?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        workers: Option<usize>,
    ) -> io::Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let manifest = RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            workers,
            artifacts: self.written.clone(),
            started_unix_seconds: self.started_unix,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        fs::write(dir.join("manifest.json"), to_json(&manifest))
    }
}
