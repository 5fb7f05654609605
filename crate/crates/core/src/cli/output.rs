//! JSON and CSV emission. Every float is written with 17 significant
//! digits so that reading it back reproduces the same `f64`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// Pretty JSON with `{:.16e}` floats. Non-finite values become `null`.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{value:.8e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let text = to_json_string(value).map_err(io::Error::other)?;
    fs::write(path, text)
}

/// One CSV cell.
pub enum Cell {
    Float(f64),
    Int(usize),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

fn write_cell<W: Write>(w: &mut W, cell: &Cell) -> io::Result<()> {
    match cell {
        Cell::Float(v) if v.is_nan() => w.write_all(b"nan"),
        Cell::Float(v) if v.is_infinite() => w.write_all(if *v > 0.0 { b"inf" } else { b"-inf" }),
        Cell::Float(v) => write!(w, "{v:.16e}"),
        Cell::Int(v) => write!(w, "{v}"),
        Cell::Bool(v) => write!(w, "{v}"),
        Cell::Empty => Ok(()),
    }
}

/// Header row, comma separated, LF line endings.
pub fn write_csv<W: Write>(w: &mut W, header: &[String], rows: impl IntoIterator<Item = Vec<Cell>>) -> io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write_cell(w, cell)?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv_file(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<Cell>>) -> io::Result<()> {
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    write_csv(&mut w, header, rows)?;
    w.flush()
}
