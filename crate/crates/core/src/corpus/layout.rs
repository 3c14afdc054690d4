use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusIndex, FrameSource, UtteranceKey};

/// Video container extensions accepted by the collated layout.
pub const VIDEO_EXTENSIONS: &[&str] = &["mp4", "mov", "avi", "mkv", "webm", "m4v", "gif"];

/// Directory conventions understood by [`scan_corpus`].
///
/// * `MiraclVc1`: `<root>/<speaker>/words/<word>/<utterance>/color_*.jpg`;
///   depth frames and the `phrases` tree are ignored.
/// * `CollatedVideo`: `<root>/<speaker>/<word>/<utterance>.<ext>`.
///
/// Utterance directory / file names are numeric. Numbering is 1-based unless
/// some utterance is literally numbered 0, in which case the corpus is read as
/// 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    MiraclVc1,
    CollatedVideo,
}

impl Layout {
    pub fn id(&self) -> &'static str {
        match self {
            Layout::MiraclVc1 => "miracl-vc1",
            Layout::CollatedVideo => "collated-video",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "miracl-vc1" | "miracl" => Ok(Layout::MiraclVc1),
            "collated-video" | "collated" => Ok(Layout::CollatedVideo),
            other => Err(format!(
                "unknown corpus layout {other:?} (expected miracl-vc1 or collated-video)"
            )),
        }
    }
}

/// Walks `root` according to `layout` and indexes every utterance found.
pub fn scan_corpus(root: &Path, layout: Layout) -> Result<CorpusIndex, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    let found = match layout {
        Layout::MiraclVc1 => scan_miracl(root)?,
        Layout::CollatedVideo => scan_collated(root)?,
    };
    if found.is_empty() {
        return Err(CorpusError::EmptyCorpus(root.to_path_buf()));
    }

    let zero_based = found.iter().any(|(_, _, n, _)| *n == 0);
    let mut entries = BTreeMap::new();
    for (speaker, word, number, source) in found {
        let utterance = if zero_based { number } else { number - 1 };
        entries.insert(UtteranceKey::new(speaker, word, utterance), source);
    }
    CorpusIndex::from_entries(root, layout, entries)
}

type Found = Vec<(String, String, u32, FrameSource)>;

fn scan_miracl(root: &Path) -> Result<Found, CorpusError> {
    let mut found = Vec::new();
    for speaker_dir in subdirs(root)? {
        let speaker = file_name(&speaker_dir);
        let words_dir = speaker_dir.join("words");
        if !words_dir.is_dir() {
            return Err(malformed(&speaker_dir, "speaker directory has no words/ subdirectory"));
        }
        for word_dir in subdirs(&words_dir)? {
            let word = file_name(&word_dir);
            parse_number(&word_dir, &word)?;
            for utt_dir in subdirs(&word_dir)? {
                let number = parse_number(&utt_dir, &file_name(&utt_dir))?;
                let frames = color_frames(&utt_dir)?;
                if frames.is_empty() {
                    return Err(malformed(&utt_dir, "utterance directory has no color_* frames"));
                }
                found.push((speaker.clone(), word.clone(), number, FrameSource::Images(frames)));
            }
        }
    }
    Ok(found)
}

fn scan_collated(root: &Path) -> Result<Found, CorpusError> {
    let mut found = Vec::new();
    for speaker_dir in subdirs(root)? {
        let speaker = file_name(&speaker_dir);
        for word_dir in subdirs(&speaker_dir)? {
            let word = file_name(&word_dir);
            for file in visible_entries(&word_dir)? {
                if file.is_dir() {
                    return Err(malformed(&file, "unexpected directory inside a word directory"));
                }
                let ext = file
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase)
                    .unwrap_or_default();
                if !VIDEO_EXTENSIONS.contains(&ext.as_str()) {
                    return Err(malformed(&file, "not a recognised video file"));
                }
                let stem = file
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let number = parse_number(&file, &stem)?;
                found.push((speaker.clone(), word.clone(), number, FrameSource::Video(file)));
            }
        }
    }
    Ok(found)
}

fn visible_entries(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let rd = fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| CorpusError::io(dir, e))?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    Ok(visible_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn color_frames(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut frames = Vec::new();
    for path in visible_entries(dir)? {
        let name = file_name(&path);
        let Some(rest) = name.strip_prefix("color_") else {
            continue;
        };
        let Some((num, ext)) = rest.rsplit_once('.') else {
            continue;
        };
        if !matches!(ext.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png") {
            continue;
        }
        let n = parse_number(&path, num)?;
        frames.push((n, path));
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

fn parse_number(path: &Path, name: &str) -> Result<u32, CorpusError> {
    if name.is_empty() || !name.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(path, "expected a zero-padded numeric name"));
    }
    name.parse()
        .map_err(|_| malformed(path, "numeric component out of range"))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn malformed(path: &Path, reason: &str) -> CorpusError {
    CorpusError::MalformedLayout {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, b"").unwrap();
    }

    #[test]
    fn empty_directory_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let err = scan_corpus(dir.path(), Layout::MiraclVc1).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCorpus(_)));
    }

    #[test]
    fn missing_root_is_reported() {
        let err = scan_corpus(Path::new("/definitely/not/here"), Layout::MiraclVc1).unwrap_err();
        assert!(matches!(err, CorpusError::MissingRoot(_)));
    }

    #[test]
    fn miracl_frames_sorted_numerically_and_depth_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let utt = dir.path().join("F01/words/01/01");
        for name in ["color_010.jpg", "color_002.jpg", "depth_001.jpg", "color_001.jpg"] {
            touch(&utt.join(name));
        }
        let index = scan_corpus(dir.path(), Layout::MiraclVc1).unwrap();
        let key = UtteranceKey::new("F01", "01", 0);
        let FrameSource::Images(frames) = &index.entries[&key] else {
            panic!("expected images");
        };
        let names: Vec<String> = frames.iter().map(|p| file_name(p)).collect();
        assert_eq!(names, ["color_001.jpg", "color_002.jpg", "color_010.jpg"]);
    }

    #[test]
    fn non_numeric_word_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("F01/words/hello/01/color_001.jpg"));
        let err = scan_corpus(dir.path(), Layout::MiraclVc1).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLayout { .. }), "{err}");
    }

    #[test]
    fn speaker_without_words_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("F01/phrases/01/01/color_001.jpg"));
        let err = scan_corpus(dir.path(), Layout::MiraclVc1).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLayout { .. }));
    }

    #[test]
    fn collated_layout_indexes_videos() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["alice", "bob"] {
            for w in ["open", "namaste"] {
                for u in 1..=6 {
                    touch(&dir.path().join(format!("{s}/{w}/{u}.mp4")));
                }
            }
        }
        let index = scan_corpus(dir.path(), Layout::CollatedVideo).unwrap();
        assert_eq!(index.len(), 24);
        assert_eq!(index.words, ["namaste", "open"]);
        assert_eq!(index.utterances_per_word, 6);
        assert!(matches!(
            index.entries[&UtteranceKey::new("bob", "open", 5)],
            FrameSource::Video(_)
        ));
    }

    #[test]
    fn collated_rejects_unknown_files() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("alice/open/1.txt"));
        let err = scan_corpus(dir.path(), Layout::CollatedVideo).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLayout { .. }));
    }

    #[test]
    fn layout_ids_round_trip() {
        for layout in [Layout::MiraclVc1, Layout::CollatedVideo] {
            assert_eq!(layout.id().parse::<Layout>().unwrap(), layout);
        }
    }
}
