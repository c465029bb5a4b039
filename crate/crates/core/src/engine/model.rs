use crate::cells::{CellConfig, CellParams, Role, TensorView, TensorViewMut};
use crate::error::{Error, Result};
use crate::math::{derive_seed, seeded_uniform, Activation, Matrix, Vector};

/// Feed-forward output stack: one hidden layer of the top recurrent
/// layer's width, then a softmax output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub hidden_w: Matrix,
    pub hidden_b: Vector,
    pub out_w: Matrix,
    pub out_b: Vector,
    /// ReLU after ReLU recurrent layers, sigmoid otherwise.
    pub activation: Activation,
}

impl HeadParams {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize, activation: Activation) -> Self {
        Self {
            hidden_w: Matrix::zeros(hidden, input_dim),
            hidden_b: Vector::zeros(hidden),
            out_w: Matrix::zeros(classes, hidden),
            out_b: Vector::zeros(classes),
            activation,
        }
    }

    pub fn init(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
        seed: u64,
        scale: f64,
    ) -> Result<Self> {
        let draw = |rows, cols, stream| seeded_uniform(rows, cols, -scale, scale, derive_seed(seed, stream));
        Ok(Self {
            hidden_w: draw(hidden, input_dim, 100)?,
            hidden_b: draw(hidden, 1, 101)?.as_slice().into(),
            out_w: draw(classes, hidden, 102)?,
            out_b: draw(classes, 1, 103)?.as_slice().into(),
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_w.cols()
    }

    pub fn classes(&self) -> usize {
        self.out_w.rows()
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        fn m<'a>(name: &'static str, x: &'a Matrix) -> TensorView<'a> {
            TensorView {
                name,
                role: Role::Weight,
                rows: x.rows(),
                cols: x.cols(),
                data: x.as_slice(),
            }
        }
        vec![
            m("W_h", &self.hidden_w),
            TensorView {
                name: "b_h",
                role: Role::Bias,
                rows: self.hidden_b.dim(),
                cols: 1,
                data: self.hidden_b.as_slice(),
            },
            m("W_y", &self.out_w),
            TensorView {
                name: "b_y",
                role: Role::Bias,
                rows: self.out_b.dim(),
                cols: 1,
                data: self.out_b.as_slice(),
            },
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let (hr, hc) = self.hidden_w.shape();
        let (or, oc) = self.out_w.shape();
        let hb = self.hidden_b.dim();
        let ob = self.out_b.dim();
        vec![
            TensorViewMut {
                name: "W_h",
                role: Role::Weight,
                rows: hr,
                cols: hc,
                data: self.hidden_w.as_mut_slice(),
            },
            TensorViewMut {
                name: "b_h",
                role: Role::Bias,
                rows: hb,
                cols: 1,
                data: self.hidden_b.as_mut_slice(),
            },
            TensorViewMut {
                name: "W_y",
                role: Role::Weight,
                rows: or,
                cols: oc,
                data: self.out_w.as_mut_slice(),
            },
            TensorViewMut {
                name: "b_y",
                role: Role::Bias,
                rows: ob,
                cols: 1,
                data: self.out_b.as_mut_slice(),
            },
        ]
    }
}

/// A tensor of a whole model, addressed by layer.
#[derive(Debug)]
pub struct ModelTensor<'a> {
    /// `Some(i)` for recurrent layer `i`, `None` for the output head.
    pub layer: Option<usize>,
    pub view: TensorView<'a>,
}

#[derive(Debug)]
pub struct ModelTensorMut<'a> {
    pub layer: Option<usize>,
    pub view: TensorViewMut<'a>,
}

impl ModelTensor<'_> {
    pub fn qualified_name(&self) -> String {
        match self.layer {
            Some(i) => format!("layer{i}.{}", self.view.name),
            None => format!("head.{}", self.view.name),
        }
    }
}

/// A stack of recurrent layers followed by the output head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub layers: Vec<CellParams>,
    pub head: HeadParams,
}

/// Checks that each layer's input size equals the previous layer's output
/// size (the projection size for projected kinds).
pub fn validate_chain(configs: &[CellConfig]) -> Result<()> {
    if configs.is_empty() {
        return Err(Error::config("a model needs at least one recurrent layer"));
    }
    for c in configs {
        c.validate()?;
    }
    for (i, pair) in configs.windows(2).enumerate() {
        let out = pair[0].output_dim();
        if pair[1].d_x != out {
            return Err(Error::config(format!(
                "layer {} expects d_x = {} but layer {} emits {}",
                i + 1,
                pair[1].d_x,
                i,
                out
            )));
        }
    }
    Ok(())
}

/// Hidden-layer activation paired with a recurrent activation.
pub fn head_activation(top: Activation) -> Activation {
    if top == Activation::Relu {
        Activation::Relu
    } else {
        Activation::Sigmoid
    }
}

impl Model {
    /// Random model; layer `i` uses seed stream `i`, the head its own.
    pub fn init(configs: &[CellConfig], classes: usize, seed: u64, scale: f64) -> Result<Self> {
        validate_chain(configs)?;
        if classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {classes}")));
        }
        let layers = configs
            .iter()
            .enumerate()
            .map(|(i, c)| CellParams::init(*c, derive_seed(seed, i as u64), scale))
            .collect::<Result<Vec<_>>>()?;
        let top = configs.last().expect("non-empty");
        let head = HeadParams::init(
            top.output_dim(),
            top.d_h,
            classes,
            head_activation(top.activation),
            derive_seed(seed, 1_000),
            scale,
        )?;
        Ok(Self { layers, head })
    }

    pub fn zeros(configs: &[CellConfig], classes: usize) -> Result<Self> {
        validate_chain(configs)?;
        let layers = configs
            .iter()
            .map(|c| CellParams::zeros(*c))
            .collect::<Result<Vec<_>>>()?;
        let top = configs.last().expect("non-empty");
        let head = HeadParams::zeros(
            top.output_dim(),
            top.d_h,
            classes,
            head_activation(top.activation),
        );
        Ok(Self { layers, head })
    }

    pub fn from_parts(layers: Vec<CellParams>, head: HeadParams) -> Result<Self> {
        let configs: Vec<CellConfig> = layers.iter().map(|l| l.config).collect();
        validate_chain(&configs)?;
        let top = configs.last().expect("non-empty");
        if head.input_dim() != top.output_dim() {
            return Err(Error::shape("head input", top.output_dim(), head.input_dim()));
        }
        Ok(Self { layers, head })
    }

    pub fn configs(&self) -> Vec<CellConfig> {
        self.layers.iter().map(|l| l.config).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].config.d_x
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    pub fn max_lag(&self) -> usize {
        self.layers.iter().map(|l| l.config.max_lag()).max().unwrap_or(1)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(CellParams::zeros_like).collect(),
            head: {
                let mut h = self.head.clone();
                for t in h.tensors_mut() {
                    t.data.fill(0.0);
                }
                h
            },
        }
    }

    pub fn tensors(&self) -> Vec<ModelTensor<'_>> {
        let mut out: Vec<ModelTensor<'_>> = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensors().into_iter().map(move |view| ModelTensor {
                    layer: Some(i),
                    view,
                })
            })
            .collect();
        out.extend(
            self.head
                .tensors()
                .into_iter()
                .map(|view| ModelTensor { layer: None, view }),
        );
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ModelTensorMut<'_>> {
        let mut out: Vec<ModelTensorMut<'_>> = self
            .layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensors_mut().into_iter().map(move |view| ModelTensorMut {
                    layer: Some(i),
                    view,
                })
            })
            .collect();
        out.extend(
            self.head
                .tensors_mut()
                .into_iter()
                .map(|view| ModelTensorMut { layer: None, view }),
        );
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.view.data.len()).sum()
    }

    /// Adds `other` elementwise; shapes must match.
    pub fn add_assign(&mut self, other: &Model) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::math::add_assign(a.view.data, b.view.data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;

    #[test]
    fn chain_validation() {
        let a = CellConfig::projected(CellKind::HornnpSigmoid, 80, 500, 250);
        let b = CellConfig::projected(CellKind::HornnpSigmoid, 250, 500, 250);
        assert!(validate_chain(&[a, b]).is_ok());
        let bad = CellConfig::projected(CellKind::HornnpSigmoid, 500, 500, 250);
        assert!(matches!(validate_chain(&[a, bad]), Err(Error::Config(_))));
        assert!(validate_chain(&[]).is_err());
    }

    #[test]
    fn head_follows_top_layer() {
        let relu = CellConfig::new(CellKind::HornnRelu, 3, 5);
        let m = Model::init(&[relu], 4, 1, 0.05).unwrap();
        assert_eq!(m.head.activation, Activation::Relu);
        assert_eq!(m.head.hidden_w.shape(), (5, 5));
        let p = CellConfig::projected(CellKind::Lstmp, 3, 6, 2);
        let m = Model::init(&[p], 4, 1, 0.05).unwrap();
        assert_eq!(m.head.activation, Activation::Sigmoid);
        assert_eq!(m.head.hidden_w.shape(), (6, 2));
        assert_eq!(m.head.out_w.shape(), (4, 6));
    }

    #[test]
    fn tensor_names_are_unique() {
        let cfgs = [
            CellConfig::new(CellKind::Lstm, 3, 4),
            CellConfig::new(CellKind::HornnSigmoid, 4, 4),
        ];
        let m = Model::init(&cfgs, 3, 2, 0.05).unwrap();
        let names: Vec<String> = m.tensors().iter().map(|t| t.qualified_name()).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len());
    }
}
