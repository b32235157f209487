//! File ingestion: the question-bank CSV and the JSONL interaction log.

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::domain::{Difficulty, InteractionEvent, Question, QuestionId};

#[derive(Debug, thiserror::Error)]
pub enum BankError {
    #[error("cannot read question bank: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate question id {id}")]
    DuplicateId { line: u64, id: QuestionId },
    #[error("line {line}: correct_index {index} out of range for {options} options")]
    InvalidCorrectIndex {
        line: u64,
        index: usize,
        options: usize,
    },
}

const REQUIRED_COLUMNS: [&str; 6] = [
    "id",
    "text",
    "correct_index",
    "difficulty",
    "teacher_level",
    "keywords",
];

pub fn load_question_bank(path: impl AsRef<Path>) -> Result<Vec<Question>, BankError> {
    parse_question_bank(File::open(path)?)
}

/// Parses `id,text,opt1..optN,correct_index,difficulty,teacher_level,keywords,topic`.
/// Option columns are recognised by their `opt` prefix and read in header order;
/// cells after `opt2` may be empty but may not leave gaps.
pub fn parse_question_bank<R: Read>(reader: R) -> Result<Vec<Question>, BankError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    for name in REQUIRED_COLUMNS {
        if col(name).is_none() {
            return Err(parse_err(1, format!("missing column `{name}`")));
        }
    }
    let option_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("opt") && h[3..].parse::<u32>().is_ok())
        .map(|(i, _)| i)
        .collect();
    if option_cols.len() < 2 {
        return Err(parse_err(1, "at least two option columns are required".into()));
    }
    let topic_col = col("topic");

    let mut seen = HashSet::new();
    let mut bank = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |name: &str| record.get(col(name).unwrap()).unwrap_or("");

        let id = field("id");
        if id.is_empty() {
            return Err(parse_err(line, "empty id".into()));
        }
        let mut options = Vec::new();
        let mut gap = false;
        for &c in &option_cols {
            let cell = record.get(c).unwrap_or("");
            if cell.is_empty() {
                gap = true;
            } else if gap {
                return Err(parse_err(line, "option cells must not leave gaps".into()));
            } else {
                options.push(cell.to_owned());
            }
        }
        if options.len() < 2 {
            return Err(parse_err(line, "a question needs at least two options".into()));
        }
        let correct_index: usize = field("correct_index")
            .parse()
            .map_err(|_| parse_err(line, format!("bad correct_index `{}`", field("correct_index"))))?;
        if correct_index >= options.len() {
            return Err(BankError::InvalidCorrectIndex {
                line,
                index: correct_index,
                options: options.len(),
            });
        }
        let difficulty = match field("difficulty").to_ascii_lowercase().as_str() {
            "basic" => Difficulty::Basic,
            "difficult" => Difficulty::Difficult,
            other => return Err(parse_err(line, format!("unknown difficulty `{other}`"))),
        };
        let teacher_level: u8 = field("teacher_level")
            .parse()
            .ok()
            .filter(|l| (1..=5).contains(l))
            .ok_or_else(|| {
                parse_err(line, format!("teacher_level `{}` not in 1..5", field("teacher_level")))
            })?;
        let keywords: BTreeSet<String> = field("keywords")
            .split(';')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::to_owned)
            .collect();
        if keywords.is_empty() {
            return Err(parse_err(line, "keywords must not be empty".into()));
        }
        let qid = QuestionId::from(id);
        if !seen.insert(qid.clone()) {
            return Err(BankError::DuplicateId { line, id: qid });
        }
        bank.push(Question {
            id: qid,
            text: field("text").to_owned(),
            options,
            correct_index,
            difficulty,
            teacher_level,
            keywords,
            topic: topic_col
                .and_then(|c| record.get(c))
                .unwrap_or("")
                .to_owned(),
        });
    }
    Ok(bank)
}

fn parse_err(line: u64, message: String) -> BankError {
    BankError::Parse { line, message }
}

/// Writes a bank back out in the canonical column layout.
pub fn write_question_bank<W: Write>(bank: &[Question], writer: W) -> Result<(), BankError> {
    let n_opts = bank.iter().map(|q| q.options.len()).max().unwrap_or(4).max(4);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_owned(), "text".to_owned()];
    header.extend((1..=n_opts).map(|i| format!("opt{i}")));
    header.extend(
        ["correct_index", "difficulty", "teacher_level", "keywords", "topic"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header).map_err(csv_io)?;
    for q in bank {
        let mut row = vec![q.id.to_string(), q.text.clone()];
        row.extend((0..n_opts).map(|i| q.options.get(i).cloned().unwrap_or_default()));
        row.push(q.correct_index.to_string());
        row.push(
            match q.difficulty {
                Difficulty::Basic => "basic",
                Difficulty::Difficult => "difficult",
            }
            .to_owned(),
        );
        row.push(q.teacher_level.to_string());
        row.push(q.keywords.iter().cloned().collect::<Vec<_>>().join(";"));
        row.push(q.topic.clone());
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> BankError {
    BankError::Io(io::Error::other(e))
}

#[derive(Debug, thiserror::Error)]
pub enum EventLogError {
    #[error("cannot access event log: {0}")]
    Io(#[from] io::Error),
    #[error("event log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Reads a JSONL event log. Blank lines are ignored. A missing file is an empty log.
pub fn read_event_log(path: impl AsRef<Path>) -> Result<Vec<InteractionEvent>, EventLogError> {
    match File::open(path) {
        Ok(f) => parse_event_log(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

pub fn parse_event_log<R: BufRead>(reader: R) -> Result<Vec<InteractionEvent>, EventLogError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|source| EventLogError::Parse {
            line: i + 1,
            source,
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Append-only JSONL writer. Each `append` is flushed before returning.
pub struct EventLogWriter {
    out: BufWriter<File>,
}

impl EventLogWriter {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EventLogError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, event: &InteractionEvent) -> Result<(), EventLogError> {
        serde_json::to_writer(&mut self.out, event).map_err(|e| EventLogError::Io(e.into()))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
