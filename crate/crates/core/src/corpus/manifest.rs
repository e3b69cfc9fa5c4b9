use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unseen,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unseen => "unseen",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unseen" => Ok(Split::Unseen),
            other => Err(Error::invalid(format!("unknown split tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerEntry {
    pub speaker_id: String,
    pub seen: bool,
    pub utterances: Vec<UtteranceRecord>,
}

/// Speakers in first-appearance order, each with its utterances in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpeakerRegistry {
    speakers: Vec<SpeakerEntry>,
    index: HashMap<String, usize>,
}

impl SpeakerRegistry {
    pub fn from_records(records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut reg = SpeakerRegistry::default();
        let mut ids = HashSet::new();
        for rec in records {
            if !ids.insert(rec.utt_id.clone()) {
                return Err(Error::DuplicateUtterance(rec.utt_id));
            }
            reg.push(rec)?;
        }
        Ok(reg)
    }

    fn push(&mut self, rec: UtteranceRecord) -> Result<()> {
        let unseen = rec.split == Split::Unseen;
        match self.index.get(&rec.speaker_id) {
            Some(&i) => {
                let entry = &mut self.speakers[i];
                if entry.seen == unseen {
                    return Err(Error::invalid(format!(
                        "speaker `{}` mixes unseen and seen splits",
                        rec.speaker_id
                    )));
                }
                entry.utterances.push(rec);
            }
            None => {
                self.index.insert(rec.speaker_id.clone(), self.speakers.len());
                self.speakers.push(SpeakerEntry {
                    speaker_id: rec.speaker_id.clone(),
                    seen: !unseen,
                    utterances: vec![rec],
                });
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> &[SpeakerEntry] {
        &self.speakers
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerEntry> {
        self.index.get(id).map(|&i| &self.speakers[i])
    }

    pub fn num_records(&self) -> usize {
        self.speakers.iter().map(|s| s.utterances.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &UtteranceRecord> {
        self.speakers.iter().flat_map(|s| s.utterances.iter())
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records().filter(move |r| r.split == split)
    }

    pub fn seen_speakers(&self) -> impl Iterator<Item = &SpeakerEntry> {
        self.speakers.iter().filter(|s| s.seen)
    }

    pub fn unseen_speakers(&self) -> impl Iterator<Item = &SpeakerEntry> {
        self.speakers.iter().filter(|s| !s.seen)
    }

    /// Speakers with at least one training utterance, in registry order.
    pub fn training_speakers(&self) -> Vec<&str> {
        self.speakers
            .iter()
            .filter(|s| s.utterances.iter().any(|u| u.split == Split::Train))
            .map(|s| s.speaker_id.as_str())
            .collect()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    utt_id: String,
    speaker_id: String,
    path: PathBuf,
    split: String,
}

/// Loads a line-delimited JSON manifest. Relative paths are resolved
/// against the manifest's directory; blank lines are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SpeakerRegistry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let line_err = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reg = SpeakerRegistry::default();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| line_err(line_no, e.to_string()))?;
        let split = raw
            .split
            .parse::<Split>()
            .map_err(|e| line_err(line_no, e.to_string()))?;
        let rec_path = if raw.path.is_absolute() {
            raw.path
        } else {
            base.join(raw.path)
        };
        if !ids.insert(raw.utt_id.clone()) {
            return Err(Error::DuplicateUtterance(raw.utt_id));
        }
        reg.push(UtteranceRecord {
            utt_id: raw.utt_id,
            speaker_id: raw.speaker_id,
            path: rec_path,
            split,
        })
        .map_err(|e| line_err(line_no, e.to_string()))?;
    }
    Ok(reg)
}

pub fn write_manifest(records: &[UtteranceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut out, rec).expect("records serialize");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Builds records from `root/<speaker>/<utt>.wav`. `num_unseen` speakers are
/// held out entirely; every seen speaker's utterances are split into train
/// and test at `test_fraction` (rounded, at least one train utterance).
pub fn manifest_from_dir(
    root: impl AsRef<Path>,
    num_unseen: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<UtteranceRecord>> {
    let root = root.as_ref();
    let mut speakers: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for entry in read_dir_sorted(root)? {
        if !entry.is_dir() {
            continue;
        }
        let name = entry.file_name().unwrap().to_string_lossy().into_owned();
        let wavs: Vec<PathBuf> = read_dir_sorted(&entry)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        if !wavs.is_empty() {
            speakers.push((name, wavs));
        }
    }
    if num_unseen > speakers.len() {
        return Err(Error::invalid(format!(
            "{num_unseen} unseen speakers requested but only {} found",
            speakers.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..speakers.len()).collect();
    order.shuffle(&mut rng);
    let unseen: HashSet<usize> = order[..num_unseen].iter().copied().collect();

    let mut records = Vec::new();
    for (i, (spk, wavs)) in speakers.into_iter().enumerate() {
        let mut wavs = wavs;
        let n_test = if unseen.contains(&i) {
            0
        } else {
            wavs.shuffle(&mut rng);
            ((wavs.len() as f64 * test_fraction).round() as usize).min(wavs.len() - 1)
        };
        for (j, wav) in wavs.into_iter().enumerate() {
            let stem = wav.file_stem().unwrap().to_string_lossy().into_owned();
            let split = if unseen.contains(&i) {
                Split::Unseen
            } else if j < n_test {
                Split::Test
            } else {
                Split::Train
            };
            let rel = wav.strip_prefix(root).map(Path::to_path_buf).unwrap_or(wav);
            records.push(UtteranceRecord {
                utt_id: format!("{spk}_{stem}"),
                speaker_id: spk.clone(),
                path: rel,
                split,
            });
        }
    }
    Ok(records)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.jsonl");
        std::fs::write(&p, body).unwrap();
        p
    }

    fn line(utt: &str, spk: &str, split: &str) -> String {
        format!(r#"{{"utt_id":"{utt}","speaker_id":"{spk}","path":"{utt}.wav","split":"{split}"}}"#)
    }

    #[test]
    fn two_by_two() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            line("a1", "a", "train"),
            line("b1", "b", "train"),
            line("a2", "a", "test"),
            line("b2", "b", "train"),
        ]
        .join("\n");
        let reg = load_manifest(write(dir.path(), &body)).unwrap();
        assert_eq!(reg.speakers().len(), 2);
        assert_eq!(reg.num_records(), 4);
        assert_eq!(reg.speakers()[0].speaker_id, "a");
        assert_eq!(reg.speaker("a").unwrap().utterances[1].utt_id, "a2");
        assert_eq!(reg.records_in(Split::Train).count(), 3);
        assert_eq!(reg.training_speakers(), vec!["a", "b"]);
        assert_eq!(
            reg.speaker("a").unwrap().utterances[0].path,
            dir.path().join("a1.wav")
        );
    }

    #[test]
    fn duplicate_id_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = [line("x", "a", "train"), line("x", "b", "train")].join("\n");
        let err = load_manifest(write(dir.path(), &body)).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n{{not json\n", line("a", "a", "train"));
        match load_manifest(write(dir.path(), &body)).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        let body = format!("{}\n\n{}", line("a", "a", "train"), line("b", "b", "dev"));
        match load_manifest(write(dir.path(), &body)).unwrap_err() {
            Error::Manifest { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("dev"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn deterministic_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            line("c1", "c", "train"),
            line("a1", "a", "train"),
            line("c2", "c", "test"),
        ]
        .join("\n");
        let p = write(dir.path(), &body);
        assert_eq!(load_manifest(&p).unwrap(), load_manifest(&p).unwrap());
    }

    #[test]
    fn seen_unseen_partition_from_tree() {
        let dir = tempfile::tempdir().unwrap();
        for s in 0..12 {
            let spk = dir.path().join(format!("p{s:03}"));
            std::fs::create_dir(&spk).unwrap();
            for u in 0..20 {
                std::fs::write(spk.join(format!("{u:03}.wav")), b"").unwrap();
            }
        }
        let recs = manifest_from_dir(dir.path(), 2, 0.1, 7).unwrap();
        let mpath = dir.path().join("m.jsonl");
        write_manifest(&recs, &mpath).unwrap();
        let reg = load_manifest(&mpath).unwrap();
        let seen: HashSet<_> = reg.seen_speakers().map(|s| s.speaker_id.clone()).collect();
        let unseen: HashSet<_> = reg.unseen_speakers().map(|s| s.speaker_id.clone()).collect();
        assert_eq!((seen.len(), unseen.len()), (10, 2));
        assert!(seen.is_disjoint(&unseen));
        for s in reg.seen_speakers() {
            let test = s.utterances.iter().filter(|u| u.split == Split::Test).count();
            assert_eq!((test, s.utterances.len() - test), (2, 18));
        }
        for s in reg.unseen_speakers() {
            assert!(s.utterances.iter().all(|u| u.split == Split::Unseen));
        }
        let train: HashSet<_> = reg.records_in(Split::Train).map(|r| &r.utt_id).collect();
        let test: HashSet<_> = reg.records_in(Split::Test).map(|r| &r.utt_id).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(recs, manifest_from_dir(dir.path(), 2, 0.1, 7).unwrap());
    }
}
