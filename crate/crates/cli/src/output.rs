//! CSV and JSON writers. Floats carry 17 significant digits; non-finite values become null.

use std::io::{self, Write};

use hcount::numeric::fmt17;
use serde::Serialize;
use serde_json::ser::Formatter;

pub const SCHEMA_VERSION: u32 = 1;

struct Digits17;

impl Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            w.write_all(fmt17(value).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

/// Pretty enough JSON with one trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser).expect("serializable report");
    buf.push(b'\n');
    String::from_utf8(buf).expect("utf-8 json")
}

/// A JSON report: the payload fields plus `schema_version` and `command`.
pub fn report<T: Serialize>(command: &str, payload: &T) -> String {
    let mut v = serde_json::to_value(payload).expect("serializable report");
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
        map.insert("command".into(), command.into());
    }
    // re-serialize numbers through the fixed-digit formatter
    to_json(&v)
}

pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub fn num(x: f64) -> String {
    fmt17(x)
}
