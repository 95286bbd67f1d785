//! JSON helpers: complex matrices are written as separate real and
//! imaginary arrays.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::linalg::{CMat, CVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CMat> for ComplexMatrixJson {
    fn from(m: &CMat) -> Self {
        let rows = |f: fn(&num_complex::Complex64) -> f64| {
            m.row_iter()
                .map(|r| r.iter().map(f).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        Self {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }
}

impl ComplexMatrixJson {
    pub fn to_cmat(&self) -> CMat {
        let nrows = self.re.len();
        let ncols = self.re.first().map_or(0, Vec::len);
        CMat::from_fn(nrows, ncols, |i, j| {
            num_complex::Complex64::new(self.re[i][j], self.im[i][j])
        })
    }
}

pub fn ser_cmat<S: Serializer>(m: &CMat, s: S) -> Result<S::Ok, S::Error> {
    ComplexMatrixJson::from(m).serialize(s)
}

pub fn ser_opt_cmat<S: Serializer>(m: &Option<CMat>, s: S) -> Result<S::Ok, S::Error> {
    m.as_ref().map(ComplexMatrixJson::from).serialize(s)
}

pub fn ser_cvec<S: Serializer>(v: &CVec, s: S) -> Result<S::Ok, S::Error> {
    let mut st = s.serialize_struct("ComplexVector", 2)?;
    st.serialize_field("re", &v.iter().map(|z| z.re).collect::<Vec<_>>())?;
    st.serialize_field("im", &v.iter().map(|z| z.im).collect::<Vec<_>>())?;
    st.end()
}
