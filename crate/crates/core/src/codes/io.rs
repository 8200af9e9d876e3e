use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BinaryMatrix, CodeError, CssCode, Layout};

/// JSON form of a [`CssCode`]: matrices as per-row lists of column indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeDocument {
    pub preset: String,
    pub n: usize,
    pub k: usize,
    pub d: Option<usize>,
    pub hx: Vec<Vec<usize>>,
    pub hz: Vec<Vec<usize>>,
    pub logicals_x: Vec<Vec<usize>>,
    pub logicals_z: Vec<Vec<usize>>,
    pub layout: Layout,
}

impl From<&CssCode> for CodeDocument {
    fn from(code: &CssCode) -> Self {
        Self {
            preset: code.name.clone(),
            n: code.n,
            k: code.k,
            d: code.d,
            hx: code.hx.supports(),
            hz: code.hz.supports(),
            logicals_x: code.logicals_x.supports(),
            logicals_z: code.logicals_z.supports(),
            layout: code.layout.clone(),
        }
    }
}

impl TryFrom<CodeDocument> for CssCode {
    type Error = CodeError;

    fn try_from(doc: CodeDocument) -> Result<Self, CodeError> {
        let check = |rows: &[Vec<usize>]| {
            if rows.iter().flatten().any(|&c| c >= doc.n) {
                Err(CodeError::Document("column index out of range".into()))
            } else {
                Ok(BinaryMatrix::from_supports(doc.n, rows))
            }
        };
        let code = CssCode {
            name: doc.preset.clone(),
            n: doc.n,
            k: doc.k,
            d: doc.d,
            hx: check(&doc.hx)?,
            hz: check(&doc.hz)?,
            logicals_x: check(&doc.logicals_x)?,
            logicals_z: check(&doc.logicals_z)?,
            layout: doc.layout,
        };
        code.validate()?;
        Ok(code)
    }
}

impl CssCode {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CodeDocument::from(self)).expect("code document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CodeError> {
        let doc: CodeDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodeError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::BbPreset;

    #[test]
    fn json_roundtrip_preserves_code() {
        for code in [CssCode::preset("surface:5").unwrap(), BbPreset::Bb72.build().unwrap()] {
            let back = CssCode::from_json(&code.to_json()).unwrap();
            assert_eq!(back, code);
        }
    }

    #[test]
    fn rejects_non_commuting_document() {
        let code = CssCode::preset("surface:3").unwrap();
        let mut doc = CodeDocument::from(&code);
        doc.hz[0] = vec![0];
        assert!(CssCode::try_from(doc).is_err());
    }
}
