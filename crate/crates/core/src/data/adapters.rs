//! Adapters for on-disk dataset layouts.
//!
//! Both adapters accept the same directory convention, documented in the
//! README: `<root>/<subject>/<gesture>/<trial file>`, where subject and
//! gesture directory names end in their numeric id (`U01`, `S3`,
//! `gesture_12`, plain `7`, ...) and each trial file holds one reading per
//! line, whitespace- or comma-separated, with the acceleration axes in the
//! last three numeric columns (leading timestamp columns are ignored).

use super::{Domain, RawTrial, AXES};
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// Source-domain layout (the pretraining population).
pub fn adapt_smartwatch_layout(root: &Path) -> Result<Vec<RawTrial>> {
    walk_layout(root, Domain::Source)
}

/// Target-domain layout (the few-shot population).
pub fn adapt_motion_gestures(root: &Path) -> Result<Vec<RawTrial>> {
    walk_layout(root, Domain::Target)
}

fn trailing_id(name: &str) -> Option<u32> {
    let digits: String = name
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

fn sorted_dir_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn parse_trial_file(path: &Path) -> Option<Vec<[f64; AXES]>> {
    let text = fs::read_to_string(path).ok()?;
    let mut readings = Vec::new();
    for line in text.lines() {
        let numbers: Vec<f64> = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|tok| !tok.is_empty())
            .filter_map(|tok| tok.parse::<f64>().ok())
            .collect();
        if numbers.len() < AXES {
            continue; // header or malformed line
        }
        let tail = &numbers[numbers.len() - AXES..];
        if tail.iter().any(|v| !v.is_finite()) {
            continue;
        }
        readings.push([tail[0], tail[1], tail[2]]);
    }
    if readings.len() < 2 {
        return None;
    }
    Some(readings)
}

fn walk_layout(root: &Path, domain: Domain) -> Result<Vec<RawTrial>> {
    if !root.is_dir() {
        return Err(Error::DatasetError(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut trials = Vec::new();
    let mut skipped = 0usize;
    for subject_dir in sorted_dir_entries(root)? {
        if !subject_dir.is_dir() {
            continue;
        }
        let Some(subject) = subject_dir.file_name().and_then(|n| n.to_str()).and_then(trailing_id)
        else {
            continue;
        };
        for gesture_dir in sorted_dir_entries(&subject_dir)? {
            if !gesture_dir.is_dir() {
                continue;
            }
            let Some(gesture) =
                gesture_dir.file_name().and_then(|n| n.to_str()).and_then(trailing_id)
            else {
                continue;
            };
            let mut rep = 0u32;
            for file in sorted_dir_entries(&gesture_dir)? {
                if !file.is_file() {
                    continue;
                }
                match parse_trial_file(&file) {
                    Some(readings) => {
                        trials.push(RawTrial::new(subject, gesture, rep, domain, readings)?);
                        rep += 1;
                    }
                    None => {
                        skipped += 1;
                        eprintln!("warning: skipping unreadable trial file {}", file.display());
                    }
                }
            }
        }
    }
    if trials.is_empty() {
        return Err(Error::DatasetError(format!(
            "no trials discovered under {}",
            root.display()
        )));
    }
    eprintln!(
        "discovered {} trials under {} ({} files skipped)",
        trials.len(),
        root.display(),
        skipped
    );
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn make_tree(files: &[(&str, &str)]) -> std::path::PathBuf {
        let root = std::env::temp_dir().join(format!(
            "lee-adapter-test-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        let _ = fs::remove_dir_all(&root);
        for (rel, content) in files {
            let path = root.join(rel);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            let mut f = fs::File::create(&path).unwrap();
            f.write_all(content.as_bytes()).unwrap();
        }
        root
    }

    #[test]
    fn discovers_trials_in_layout() {
        let root = make_tree(&[
            ("U01/01/trial_a.txt", "100 0.1 0.2 0.3\n200 0.4 0.5 0.6\n"),
            ("U01/01/trial_b.txt", "0.1,0.2,0.3\n0.7,0.8,0.9\n1.0,1.1,1.2\n"),
            ("U02/01/trial_a.txt", "t x y z\n1 2 3 4\n5 6 7 8\n"),
        ]);
        let trials = adapt_smartwatch_layout(&root).unwrap();
        assert_eq!(trials.len(), 3);
        assert_eq!(trials[0].subject, 1);
        assert_eq!(trials[0].gesture, 1);
        assert_eq!(trials[0].rep, 0);
        assert_eq!(trials[0].readings, vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]);
        assert_eq!(trials[1].rep, 1);
        // header line skipped, timestamp column dropped
        assert_eq!(trials[2].subject, 2);
        assert_eq!(trials[2].readings, vec![[2.0, 3.0, 4.0], [6.0, 7.0, 8.0]]);
        assert!(trials.iter().all(|t| t.domain == Domain::Source));
        fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn unreadable_files_skipped() {
        let root = make_tree(&[
            ("S1/G1/good.txt", "0.1 0.2 0.3\n0.4 0.5 0.6\n"),
            ("S1/G1/junk.txt", "not numeric at all\n"),
        ]);
        let trials = adapt_motion_gestures(&root).unwrap();
        assert_eq!(trials.len(), 1);
        assert_eq!(trials[0].domain, Domain::Target);
        fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn empty_root_is_dataset_error() {
        let root = make_tree(&[]);
        fs::create_dir_all(&root).unwrap();
        assert!(matches!(
            adapt_smartwatch_layout(&root),
            Err(Error::DatasetError(_))
        ));
        fs::remove_dir_all(&root).ok();
    }
}
