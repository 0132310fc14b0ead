use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{ops, ParamSet, ValueGrid};
use crate::error::Result;

/// Indices of one fully connected layer's weight (out x in) and bias in a [`ParamSet`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
}

impl Dense {
    fn weight<'a>(&self, params: &'a ParamSet) -> ArrayView2<'a, f64> {
        params.get(self.w).view2()
    }

    fn bias<'a>(&self, params: &'a ParamSet) -> ArrayView1<'a, f64> {
        params.get(self.b).view1()
    }
}

fn view_mut2(grid: &mut ValueGrid) -> ArrayViewMut2<'_, f64> {
    let shape = grid.shape().to_vec();
    ArrayViewMut2::from_shape((shape[0], shape[1]), grid.data_mut()).expect("weight shape")
}

fn view_mut1(grid: &mut ValueGrid) -> ArrayViewMut1<'_, f64> {
    let n = grid.len();
    ArrayViewMut1::from_shape(n, grid.data_mut()).expect("bias shape")
}

/// Three fully connected layers with ReLU between them.
#[derive(Debug, Clone)]
pub(crate) struct Subnet {
    pub layers: [Dense; 3],
}

pub(crate) struct SubnetCache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    act2: Array2<f64>,
}

impl Subnet {
    /// Registers the subnet's parameters. Hidden layers get He-normal
    /// weights; the output layer starts at zero.
    pub fn register(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let dims = [(input, hidden), (hidden, hidden), (hidden, output)];
        let mut layers = Vec::with_capacity(3);
        for (k, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = if k < 2 {
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                ValueGrid::new(vec![fan_out, fan_in], data)?
            } else {
                ValueGrid::zeros(vec![fan_out, fan_in])
            };
            let w = params.push(format!("{prefix}.fc{}.weight", k + 1), w)?;
            let b = params.push(format!("{prefix}.fc{}.bias", k + 1), ValueGrid::zeros(vec![fan_out]))?;
            layers.push(Dense { w, b });
        }
        Ok(Self {
            layers: [layers[0], layers[1], layers[2]],
        })
    }

    pub fn output_weight_is_zero(&self, params: &ParamSet) -> bool {
        params.get(self.layers[2].w).data().iter().all(|&v| v == 0.0)
    }

    pub fn output_bias<'a>(&self, params: &'a ParamSet) -> &'a [f64] {
        params.get(self.layers[2].b).data()
    }

    pub fn forward(&self, params: &ParamSet, input: Array2<f64>, keep: bool) -> (Array2<f64>, Option<SubnetCache>) {
        let [l1, l2, l3] = &self.layers;
        let pre1 = ops::affine(input.view(), l1.weight(params), l1.bias(params));
        let act1 = ops::relu(pre1.view());
        let pre2 = ops::affine(act1.view(), l2.weight(params), l2.bias(params));
        let act2 = ops::relu(pre2.view());
        let out = ops::affine(act2.view(), l3.weight(params), l3.bias(params));
        let cache = keep.then_some(SubnetCache {
            input,
            pre1,
            act1,
            pre2,
            act2,
        });
        (out, cache)
    }

    /// Returns the gradient with respect to the subnet input and
    /// accumulates parameter gradients into `grads` when given.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &SubnetCache,
        gout: ArrayView2<f64>,
        mut grads: Option<&mut ParamSet>,
    ) -> Array2<f64> {
        let [l1, l2, l3] = &self.layers;
        let mut step = |layer: &Dense, x: ArrayView2<f64>, gy: ArrayView2<f64>| -> Array2<f64> {
            match grads.as_deref_mut() {
                Some(g) => {
                    let gw = view_mut2(g.get_mut(layer.w));
                    ops::affine_backward(x, layer.weight(params), gy, Some(gw), None, false);
                    let gb = view_mut1(g.get_mut(layer.b));
                    ops::affine_backward(x, layer.weight(params), gy, None, Some(gb), true).unwrap()
                }
                None => ops::affine_backward(x, layer.weight(params), gy, None, None, true).unwrap(),
            }
        };
        let gact2 = step(l3, cache.act2.view(), gout);
        let gpre2 = ops::relu_backward(cache.pre2.view(), gact2.view());
        let gact1 = step(l2, cache.act1.view(), gpre2.view());
        let gpre1 = ops::relu_backward(cache.pre1.view(), gact1.view());
        step(l1, cache.input.view(), gpre1.view())
    }
}
