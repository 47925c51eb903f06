//! Line protocol for external answerers.
//!
//! Requests and responses are one JSON object per line:
//!
//! ```text
//! > {"doc_id":17,"question":[3,8,21]}
//! < {"answer":[40,41]}
//! < {"error":"unknown document 17"}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use anyhow::Context;
use mialab_core::blackbox::AnswerOracle;
use mialab_core::data::{DocId, DocRecord, Document, Token};
use mialab_core::model::{EncoderInput, Seq2Seq};
use mialab_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub doc_id: DocId,
    pub question: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Answer { answer: Vec<Token> },
    Error { error: String },
}

/// Talks to a child process over its stdin and stdout.
pub struct SubprocessOracle {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessOracle {
    pub fn spawn(command: &[String]) -> anyhow::Result<Self> {
        let (prog, args) = command.split_first().context("empty oracle command")?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("spawning oracle `{}`", command.join(" ")))?;
        let stdin = child.stdin.take().context("oracle stdin")?;
        let stdout = BufReader::new(child.stdout.take().context("oracle stdout")?);
        Ok(SubprocessOracle { child, stdin, stdout })
    }
}

impl AnswerOracle for SubprocessOracle {
    fn answer(&mut self, document: &Document, question: &[Token]) -> Result<Vec<Token>> {
        let req = Request { doc_id: document.doc_id, question: question.to_vec() };
        let io = |e: std::io::Error| Error::Oracle(e.to_string());
        let mut line = serde_json::to_string(&req).map_err(|e| Error::Oracle(e.to_string()))?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes()).map_err(io)?;
        self.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply).map_err(io)? == 0 {
            return Err(Error::Oracle("oracle closed its output".into()));
        }
        match serde_json::from_str(&reply).map_err(|e| Error::Oracle(format!("bad reply `{}`: {e}", reply.trim())))? {
            Response::Answer { answer } => Ok(answer),
            Response::Error { error } => Err(Error::Oracle(error)),
        }
    }
}

impl Drop for SubprocessOracle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Answers requests from `input` with `model` until end of input.
/// Malformed requests and unknown documents get error replies.
pub fn serve<'a>(
    model: &Seq2Seq,
    documents: impl IntoIterator<Item = &'a DocRecord>,
    input: impl BufRead,
    mut output: impl Write,
) -> anyhow::Result<usize> {
    let docs: BTreeMap<DocId, Vec<Token>> =
        documents.into_iter().map(|r| (r.id(), r.document.linearize())).collect();
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Err(e) => Response::Error { error: format!("bad request: {e}") },
            Ok(req) => match docs.get(&req.doc_id) {
                None => Response::Error { error: format!("unknown document {}", req.doc_id.0) },
                Some(doc) => match model.generate(&EncoderInput::new(doc, &req.question)) {
                    Ok(g) => Response::Answer { answer: g.answer().to_vec() },
                    Err(e) => Response::Error { error: e.to_string() },
                },
            },
        };
        serde_json::to_writer(&mut output, &resp)?;
        writeln!(output)?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}
