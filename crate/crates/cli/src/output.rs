use crate::config::ExperimentConfig;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Resolved configuration and toolkit version, written at the top of every file.
#[derive(Debug, Clone)]
pub struct Header {
    pub command: String,
    pub config: ExperimentConfig,
}

impl Header {
    pub fn json(&self) -> Value {
        json!({
            "tool": "assouad-lab",
            "version": VERSION,
            "command": self.command,
            "config": serde_json::to_value(&self.config).expect("config serializes"),
        })
    }

    fn comment_lines(&self) -> String {
        let mut s = format!("# assouad-lab {VERSION}\n# command = {}\n", self.command);
        for line in self.config.to_toml().lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

pub struct Writer {
    pub dir: PathBuf,
    pub header: Header,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path, header: Header) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, body: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(body)?;
        self.written.push(path);
        Ok(())
    }

    /// `{"header": ..., <fields of body>}`.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> std::io::Result<()> {
        let mut v = serde_json::to_value(body).map_err(std::io::Error::other)?;
        let obj = match v.as_object_mut() {
            Some(o) => {
                let mut m = serde_json::Map::new();
                m.insert("header".into(), self.header.json());
                m.append(o);
                Value::Object(m)
            }
            None => json!({"header": self.header.json(), "result": v}),
        };
        let mut text = serde_json::to_string_pretty(&obj).map_err(std::io::Error::other)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    /// A header record followed by one record per line.
    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> std::io::Result<()> {
        let mut text = serde_json::to_string(&json!({"header": self.header.json()})).map_err(std::io::Error::other)?;
        text.push('\n');
        for r in records {
            text.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
            text.push('\n');
        }
        self.put(name, text.as_bytes())
    }

    /// Comment header, then the CSV body as given.
    pub fn csv(&mut self, name: &str, body: &str) -> std::io::Result<()> {
        let mut text = self.header.comment_lines();
        text.push_str(body);
        self.put(name, text.as_bytes())
    }
}
