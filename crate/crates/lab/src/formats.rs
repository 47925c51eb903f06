//! Line-delimited JSON files for corpora and query datasets.
//!
//! The first line is a header object:
//!
//! ```text
//! {"format":"mialab-corpus","version":1,"seed":0,"config":{..}}
//! ```
//!
//! Every following line is one document:
//!
//! ```text
//! {"pool":"train","attack":true,"document":{"doc_id":3,"fields":[{"key":5,"value":[40,41]}]},
//!  "qas":[{"question":[..],"answer":[40,41],"template_id":0,"field_key":5}]}
//! ```
//!
//! `pool` is `train`, `nonmember`, `pretrain` or `query`; `attack` marks
//! training documents that belong to the attack set. Tokens are vocabulary
//! ids.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context};
use mialab_core::blackbox::QueryDataset;
use mialab_core::data::{Corpus, CorpusConfig, DocRecord};
use mialab_core::rng::Seed;
use serde::{Deserialize, Serialize};

pub const CORPUS_FORMAT: &str = "mialab-corpus";
pub const QUERY_FORMAT: &str = "mialab-queries";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Train,
    Nonmember,
    Pretrain,
    Query,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    config: Option<CorpusConfig>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    pool: Pool,
    #[serde(default)]
    attack: bool,
    #[serde(flatten)]
    record: DocRecord,
}

fn write_header(w: &mut impl Write, format: &str, seed: u64, config: Option<&CorpusConfig>) -> anyhow::Result<()> {
    let h = Header { format: format.into(), version: FORMAT_VERSION, seed, config: config.cloned() };
    serde_json::to_writer(&mut *w, &h)?;
    writeln!(w)?;
    Ok(())
}

fn write_line(w: &mut impl Write, pool: Pool, attack: bool, record: &DocRecord) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *w, &Line { pool, attack, record: record.clone() })?;
    writeln!(w)?;
    Ok(())
}

pub fn write_corpus(w: &mut impl Write, corpus: &Corpus) -> anyhow::Result<()> {
    write_header(w, CORPUS_FORMAT, corpus.seed.0, Some(&corpus.config))?;
    for r in &corpus.train {
        write_line(w, Pool::Train, corpus.members.contains(&r.id()), r)?;
    }
    for r in &corpus.nonmembers {
        write_line(w, Pool::Nonmember, false, r)?;
    }
    for r in &corpus.pretrain {
        write_line(w, Pool::Pretrain, false, r)?;
    }
    Ok(())
}

fn read_lines(r: impl BufRead, format: &str) -> anyhow::Result<(Header, Vec<Line>)> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| !l.as_ref().is_ok_and(|s| s.trim().is_empty()));
    let (_, first) = lines.next().context("empty file")?;
    let header: Header = serde_json::from_str(&first?).context("line 1: header")?;
    if header.format != format {
        bail!("expected format `{format}`, found `{}`", header.format);
    }
    if header.version != FORMAT_VERSION {
        bail!("unsupported {format} version {}", header.version);
    }
    let body = lines
        .map(|(i, l)| serde_json::from_str::<Line>(&l?).with_context(|| format!("line {}", i + 1)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((header, body))
}

pub fn read_corpus(r: impl BufRead) -> anyhow::Result<Corpus> {
    let (header, lines) = read_lines(r, CORPUS_FORMAT)?;
    let config = header.config.context("corpus header lacks its config")?;
    let mut corpus =
        Corpus { config, seed: Seed(header.seed), train: vec![], members: vec![], nonmembers: vec![], pretrain: vec![] };
    for l in lines {
        match l.pool {
            Pool::Train => {
                if l.attack {
                    corpus.members.push(l.record.id());
                }
                corpus.train.push(l.record);
            }
            Pool::Nonmember => corpus.nonmembers.push(l.record),
            Pool::Pretrain => corpus.pretrain.push(l.record),
            Pool::Query => bail!("query record in a corpus file"),
        }
    }
    Ok(corpus)
}

pub fn write_queries(w: &mut impl Write, queries: &QueryDataset, seed: u64) -> anyhow::Result<()> {
    write_header(w, QUERY_FORMAT, seed, None)?;
    for r in &queries.records {
        write_line(w, Pool::Query, false, r)?;
    }
    Ok(())
}

pub fn read_queries(r: impl BufRead) -> anyhow::Result<QueryDataset> {
    let (_, lines) = read_lines(r, QUERY_FORMAT)?;
    Ok(QueryDataset { records: lines.into_iter().map(|l| l.record).collect() })
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> anyhow::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_corpus(&mut w, corpus)?;
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> anyhow::Result<Corpus> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_corpus(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}
