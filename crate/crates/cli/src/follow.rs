//! Tailing a stream file that another process is still appending to.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use netcp_core::{DetectionOutcome, Detector, MaskedSnapshot, StreamHeader, StreamParser};

use crate::Report;

/// Reads whole lines as they appear; a trailing partial line is held back
/// until its newline arrives.
struct Tail {
    reader: BufReader<File>,
    partial: String,
}

impl Tail {
    fn next_line(&mut self) -> anyhow::Result<Option<String>> {
        let mut chunk = String::new();
        let read = self.reader.read_line(&mut chunk)?;
        if read == 0 {
            return Ok(None);
        }
        self.partial.push_str(&chunk);
        if self.partial.ends_with('\n') {
            Ok(Some(std::mem::take(&mut self.partial)))
        } else {
            Ok(None)
        }
    }
}

fn print_status(outcome: &DetectionOutcome) {
    match outcome.binding() {
        Some(p) => println!(
            "t={} pairs={} max_stat={:.6} s={} thresh={:.6}",
            outcome.t,
            outcome.evaluated_pairs.len(),
            p.statistic,
            p.s,
            p.threshold
        ),
        None => println!("t={} pairs=0", outcome.t),
    }
}

pub(crate) fn follow(path: &Path, mut detector: Detector, poll: Duration, idle: Duration) -> anyhow::Result<Report> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut tail = Tail { reader: BufReader::new(file), partial: String::new() };
    let mut parser: Option<StreamParser> = None;
    let mut last_data = Instant::now();

    let feed = |detector: &mut Detector, snaps: Vec<MaskedSnapshot>| -> anyhow::Result<Option<Report>> {
        for snap in snaps {
            let outcome = detector.step(snap)?;
            print_status(&outcome);
            if let Some(alarm) = outcome.alarm {
                return Ok(Some(Report { alarm: Some(alarm), t: outcome.t }));
            }
        }
        Ok(None)
    };

    loop {
        match tail.next_line()? {
            Some(line) => {
                last_data = Instant::now();
                match parser.as_mut() {
                    None => {
                        let header = StreamHeader::parse(&line)?;
                        if header.n != detector.profile().n {
                            bail!("stream has n={} but the profile was fitted for n={}", header.n, detector.profile().n);
                        }
                        parser = Some(StreamParser::new(header));
                    }
                    Some(p) => {
                        let done = p.push_line(&line)?;
                        if let Some(report) = feed(&mut detector, done)? {
                            return Ok(report);
                        }
                    }
                }
            }
            None => {
                if last_data.elapsed() >= idle {
                    break;
                }
                thread::sleep(poll);
            }
        }
    }

    // No new data: the snapshot being assembled is as complete as it gets.
    let Some(mut p) = parser else {
        bail!("no header arrived in {}", path.display());
    };
    if p.has_pending_records() {
        let snap = p.finalize_pending()?;
        if let Some(report) = feed(&mut detector, vec![snap])? {
            return Ok(report);
        }
    }
    Ok(Report { alarm: None, t: detector.t() })
}
