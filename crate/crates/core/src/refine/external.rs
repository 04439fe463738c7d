//! Refinement by an external program.
//!
//! Protocol: the input clip is written to `<work>/input/` (16-bit PNG frames
//! `frame_00000.png …` plus `clip.json`), an empty `<work>/output/` is created,
//! and the command runs as `program [args…] <work>/input <work>/output` with
//! `STAGGER4D_INPUT` and `STAGGER4D_OUTPUT` also set. Exit status 0 means the
//! output directory holds one PNG per input frame under the same file names;
//! any other status is a refinement error. The work directory is removed
//! afterwards unless `keep_work_dir` is set.

use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::frame::VideoClip;

use super::{io_err, read_clip_frames, read_clip_manifest, write_clip, ArtifactFixer, LatencyClass, RefineError};

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Clone, Debug)]
pub struct ExternalProcessFixer {
    pub program: String,
    pub args: Vec<String>,
    /// Parent of the per-call work directories; the system temp dir when `None`.
    pub work_root: Option<PathBuf>,
    pub keep_work_dir: bool,
}

impl ExternalProcessFixer {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            work_root: None,
            keep_work_dir: false,
        }
    }
}

impl ArtifactFixer for ExternalProcessFixer {
    fn name(&self) -> &str {
        "external"
    }

    fn latency_class(&self) -> LatencyClass {
        LatencyClass::WholeClip
    }

    fn fix(&self, clip: &VideoClip) -> Result<VideoClip, RefineError> {
        let root = self.work_root.clone().unwrap_or_else(std::env::temp_dir);
        let work = root.join(format!(
            "stagger4d-refine-{}-{}",
            std::process::id(),
            RUN_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let input = work.join("input");
        let output = work.join("output");
        write_clip(clip, &input)?;
        fs::create_dir_all(&output).map_err(|e| io_err(&output, e))?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .env("STAGGER4D_INPUT", &input)
            .env("STAGGER4D_OUTPUT", &output)
            .status()
            .map_err(|e| RefineError::External(format!("cannot run {}: {e}", self.program)))?;
        let result = if status.success() {
            read_clip_manifest(&input).and_then(|m| read_clip_frames(&output, &m))
        } else {
            Err(RefineError::External(format!("{} exited with {status}", self.program)))
        };
        if !self.keep_work_dir {
            let _ = fs::remove_dir_all(&work);
        }
        result
    }
}
