use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::svd::nuclear_norm;

/// Frobenius norm of the reconstruction residual.
pub fn frob_error(w: &DenseMatrix, w_hat: &DenseMatrix) -> Result<f64> {
    Ok(w.sub(w_hat)?.frob_norm())
}

/// Nuclear norm of the reconstruction residual.
pub fn quant_error_nuclear(w: &DenseMatrix, w_hat: &DenseMatrix) -> Result<f64> {
    nuclear_norm(&w.sub(w_hat)?)
}

/// Error reduction relative to the NF4 block-wise baseline:
/// 1 - ||W - W_method||_* / ||W - W_nf4||_*. Higher is better.
pub fn reduction_ratio(
    w: &DenseMatrix,
    w_hat_method: &DenseMatrix,
    w_hat_nf4: &DenseMatrix,
) -> Result<f64> {
    let baseline = quant_error_nuclear(w, w_hat_nf4)?;
    if baseline == 0.0 {
        return Err(Error::invalid(
            "baseline residual is zero; the reduction ratio is undefined".to_string(),
        ));
    }
    Ok(1.0 - quant_error_nuclear(w, w_hat_method)? / baseline)
}

/// Scale-parameter budget of a method, for the float-count column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleBudget {
    BlockSize(usize),
    Rank(usize),
}

impl ScaleBudget {
    pub fn float_params(&self, rows: usize, cols: usize) -> usize {
        match self {
            ScaleBudget::BlockSize(b) => rows * cols / b,
            ScaleBudget::Rank(r) => r * (rows + cols),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScaleBudget::BlockSize(b) => format!("B={b}"),
            ScaleBudget::Rank(r) => format!("r={r}"),
        }
    }
}

/// One evaluated reconstruction of a weight matrix.
#[derive(Debug, Clone)]
pub struct MethodEval {
    pub name: String,
    pub budget: ScaleBudget,
    pub w_hat: DenseMatrix,
    /// Exactly one method per matrix must carry the baseline flag; its
    /// nuclear residual is the ratio denominator for all rows of that matrix.
    pub is_baseline: bool,
}

/// A weight matrix together with the reconstructions to compare on it.
#[derive(Debug, Clone)]
pub struct ReportInput {
    pub label: String,
    pub weights: DenseMatrix,
    pub methods: Vec<MethodEval>,
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub matrix: String,
    pub method: String,
    pub budget: String,
    pub float_params: usize,
    pub frob: f64,
    pub nuclear: f64,
    pub ratio: f64,
}

/// Comparison table plus the unweighted mean over all rows.
#[derive(Debug, Clone)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    pub mean_frob: f64,
    pub mean_nuclear: f64,
    pub mean_ratio: f64,
}

/// Builds the per-matrix comparison rows and their aggregate.
pub fn comparison_report(inputs: &[ReportInput]) -> Result<ReportTable> {
    if inputs.is_empty() {
        return Err(Error::invalid("comparison report needs at least one matrix".to_string()));
    }
    let mut rows = Vec::new();
    for input in inputs {
        let baselines: Vec<&MethodEval> = input.methods.iter().filter(|m| m.is_baseline).collect();
        if baselines.len() != 1 {
            return Err(Error::invalid(format!(
                "matrix '{}' must mark exactly one baseline method, found {}",
                input.label,
                baselines.len()
            )));
        }
        let baseline_nuclear = quant_error_nuclear(&input.weights, &baselines[0].w_hat)?;
        if baseline_nuclear == 0.0 {
            return Err(Error::invalid(format!(
                "matrix '{}': baseline residual is zero; the reduction ratio is undefined",
                input.label
            )));
        }
        for method in &input.methods {
            let frob = frob_error(&input.weights, &method.w_hat)?;
            let nuclear = quant_error_nuclear(&input.weights, &method.w_hat)?;
            rows.push(ReportRow {
                matrix: input.label.clone(),
                method: method.name.clone(),
                budget: method.budget.label(),
                float_params: method.budget.float_params(input.weights.rows(), input.weights.cols()),
                frob,
                nuclear,
                ratio: 1.0 - nuclear / baseline_nuclear,
            });
        }
    }
    let count = rows.len() as f64;
    Ok(ReportTable {
        mean_frob: rows.iter().map(|r| r.frob).sum::<f64>() / count,
        mean_nuclear: rows.iter().map(|r| r.nuclear).sum::<f64>() / count,
        mean_ratio: rows.iter().map(|r| r.ratio).sum::<f64>() / count,
        rows,
    })
}

const HEADERS: [&str; 7] = [
    "matrix",
    "method",
    "budget",
    "float_params",
    "frob_error",
    "nuclear_error",
    "reduction_ratio",
];

impl ReportTable {
    fn cells(&self) -> Vec<[String; 7]> {
        let mut out: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.matrix.clone(),
                    r.method.clone(),
                    r.budget.clone(),
                    r.float_params.to_string(),
                    format!("{:.6}", r.frob),
                    format!("{:.6}", r.nuclear),
                    format!("{:.6}", r.ratio),
                ]
            })
            .collect();
        out.push([
            "mean".to_string(),
            String::new(),
            String::new(),
            String::new(),
            format!("{:.6}", self.mean_frob),
            format!("{:.6}", self.mean_nuclear),
            format!("{:.6}", self.mean_ratio),
        ]);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = HEADERS.join(",");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Markdown table with columns padded to equal width.
    pub fn to_markdown(&self) -> String {
        let cells = self.cells();
        let mut widths: Vec<usize> = HEADERS.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                widths[i] = widths[i].max(c.len());
            }
        }
        let fmt_row = |cols: &[String]| {
            let padded: Vec<String> = cols
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
                .collect();
            format!("| {} |", padded.join(" | "))
        };
        let header: Vec<String> = HEADERS.iter().map(|h| h.to_string()).collect();
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let mut out = fmt_row(&header);
        out.push('\n');
        out.push_str(&fmt_row(&rule));
        out.push('\n');
        for row in &cells {
            out.push_str(&fmt_row(row));
            out.push('\n');
        }
        out
    }
}
