use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module(code: &str) {
    Python::attach(|py| {
        let m = PyModule::new(py, "pyrwre").unwrap();
        pyrwre::register(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("pyrwre", m).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn laws_and_formulas() {
    with_module(
        r#"
law = pyrwre.Law.one_dim([(0.3, 0.5), (0.9, 0.5)])
assert law.dim == 1
c = pyrwre.classify_1d(law)
assert c["class"] == "transient_right", c
k = pyrwre.kks_kappa(pyrwre.Law.one_dim([(1/3, 0.5), (0.8, 0.5)]))
assert 0.68 <= k <= 0.71, k
v = pyrwre.velocity_1d(pyrwre.Law.two_point(0.8, 0.4), "solomon")
assert abs(v["estimate"]["estimate"] - 1/15) < 1e-12
env = pyrwre.Env(pyrwre.Law.homogeneous_1d(0.75), 1)
assert abs(pyrwre.exit_right_probability(env, -2, 2, 0) - 0.9) < 1e-10
assert abs(sum(env.kernel_at([5])) - 1.0) < 1e-15
path = env.walk(100, 3)
assert len(path) == 101 and path[0] == [0]
"#,
    );
}

#[test]
fn errors_and_experiments() {
    with_module(
        r#"
try:
    pyrwre.Law.homogeneous_1d(1.5)
    raise AssertionError("accepted p = 1.5")
except ValueError:
    pass
try:
    pyrwre.run_experiment("experiment = kks\nlaw = two_point\np1 = 0.3\np2 = 0.7\nvelcoity = 1\n")
    raise AssertionError("accepted a typo")
except ValueError as e:
    assert "line 5" in str(e), e
csv, js = pyrwre.run_experiment("experiment = classify1d\nlaw = one_dim\natoms = 0.3:0.5, 0.9:0.5\n")
assert csv.splitlines()[1] == "verdict,TransientRight"
import json
assert json.loads(js)["estimates"]["verdict"] == "TransientRight"
env = pyrwre.Env(pyrwre.Law.homogeneous_1d(0.6), 1).with_holding()
i = pyrwre.rate(env, [0.2], 500)
assert abs(i - pyrwre.legendre([0.36, 0.24, 0.4], [0.2])) < 0.05
"#,
    );
}
