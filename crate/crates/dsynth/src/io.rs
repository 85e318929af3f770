//! Dataset and schema file formats.
//!
//! Tables travel as headered CSV with the schema supplied side-band as a TOML
//! file. Continuous values are written with 17 significant digits
//! (`{:.16e}`), which round-trips every finite `f64` exactly; discrete values
//! are written as their level labels (binary as `0`/`1`). Ingestion is
//! complete-case: an empty cell is an error, not a missing value.
//!
//! Schema file grammar, one `[[column]]` block per column in order:
//!
//! ```toml
//! [[column]]
//! name = "age"
//! kind = "continuous"
//!
//! [[column]]
//! name = "stage"
//! kind = "ordinal"          # or "categorical", "binary"
//! levels = ["I", "II", "III", "IV"]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::table::{ColumnKind, Schema, Table};

/// Formats a continuous value with 17 significant digits.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Writes a table as CSV with a header row.
pub fn write_csv<W: Write>(table: &Table, writer: W) -> Result<Table> {
    let schema = table.schema();
    let mut csv_writer = csv::Writer::from_writer(writer);
    let to_io_error = |e: csv::Error| Error::io("csv", std::io::Error::other(e));
    csv_writer
        .write_record(schema.columns().map(|(name, _)| name))
        .map_err(to_io_error)?;
    let mut record = Vec::with_capacity(schema.len());
    for row in 0..table.n_rows() {
        record.clear();
        for col in 0..schema.len() {
            let value = table.value(row, col);
            record.push(match schema.kind(col) {
                ColumnKind::Continuous => format_f64(value),
                _ => schema.level_label(col, value as usize),
            });
        }
        csv_writer.write_record(&record).map_err(to_io_error)?;
    }
    csv_writer.flush().map_err(|e| Error::io("csv", e))?;
    Ok(table.clone())
}

pub fn write_csv_file(table: &Table, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    write_csv(table, std::io::BufWriter::new(file))?;
    Ok(())
}

/// Reads a headered CSV under the given schema. Columns are matched by
/// header name and may appear in any order; all schema columns must be
/// present.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, path: &str) -> Result<Table> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| Error::ParseData {
            path: path.to_string(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut header_pos = Vec::with_capacity(schema.len());
    for (name, _) in schema.columns() {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ParseData {
                path: path.to_string(),
                line: 1,
                message: format!("missing column `{name}` in header"),
            })?;
        header_pos.push(pos);
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (row_idx, record) in csv_reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| Error::ParseData {
            path: path.to_string(),
            line,
            message: e.to_string(),
        })?;
        for (col, &pos) in header_pos.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::MissingValue {
                    column: schema.name(col).to_string(),
                    row: row_idx,
                });
            }
            let value = match schema.kind(col) {
                ColumnKind::Continuous => raw.parse::<f64>().map_err(|_| Error::ParseData {
                    path: path.to_string(),
                    line,
                    message: format!("`{raw}` is not a number for column `{}`", schema.name(col)),
                })?,
                _ => schema.level_index(col, raw).map_err(|_| Error::ParseData {
                    path: path.to_string(),
                    line,
                    message: format!(
                        "`{raw}` is not a level of column `{}`",
                        schema.name(col)
                    ),
                })? as f64,
            };
            columns[col].push(value);
        }
    }
    Table::new(schema.clone(), columns)
}

pub fn read_csv_file(path: &Path, schema: &Schema) -> Result<Table> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_csv(
        std::io::BufReader::new(file),
        schema,
        &path.display().to_string(),
    )
}

#[derive(Deserialize)]
struct SchemaFile {
    #[serde(default)]
    column: Vec<SchemaColumn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaColumn {
    name: String,
    kind: String,
    #[serde(default)]
    levels: Vec<String>,
}

/// Parses the TOML schema grammar shown in the module docs.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let file: SchemaFile =
        toml::from_str(text).map_err(|e| Error::InvalidSchema(e.to_string()))?;
    if file.column.is_empty() {
        return Err(Error::InvalidSchema("no columns declared".into()));
    }
    let mut columns = Vec::with_capacity(file.column.len());
    for col in file.column {
        let kind = match col.kind.as_str() {
            "continuous" => {
                if !col.levels.is_empty() {
                    return Err(Error::InvalidSchema(format!(
                        "column `{}` is continuous but declares levels",
                        col.name
                    )));
                }
                ColumnKind::Continuous
            }
            "binary" => {
                if !col.levels.is_empty() {
                    return Err(Error::InvalidSchema(format!(
                        "column `{}` is binary; levels are fixed to 0/1",
                        col.name
                    )));
                }
                ColumnKind::Binary
            }
            "ordinal" => ColumnKind::Ordinal(col.levels),
            "categorical" => ColumnKind::Categorical(col.levels),
            other => {
                return Err(Error::InvalidSchema(format!(
                    "column `{}` has unknown kind `{other}`",
                    col.name
                )))
            }
        };
        columns.push((col.name, kind));
    }
    Schema::new(columns)
}

pub fn read_schema_file(path: &Path) -> Result<Schema> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_schema(&text)
}

/// Renders a schema in the TOML grammar; `parse_schema` inverts it.
pub fn schema_to_toml(schema: &Schema) -> String {
    let mut out = String::new();
    for (name, kind) in schema.columns() {
        out.push_str("[[column]]\n");
        out.push_str(&format!("name = {name:?}\n"));
        out.push_str(&format!("kind = {:?}\n", kind.name()));
        if let Some(levels) = kind.levels() {
            let rendered: Vec<String> = levels.iter().map(|l| format!("{l:?}")).collect();
            out.push_str(&format!("levels = [{}]\n", rendered.join(", ")));
        }
        out.push('\n');
    }
    out
}

pub fn write_schema_file(schema: &Schema, path: &Path) -> Result<()> {
    std::fs::write(path, schema_to_toml(schema))
        .map_err(|e| Error::io(path.display().to_string(), e))
}
