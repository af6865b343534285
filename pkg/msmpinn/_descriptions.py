VALID_PROBLEMS = ["allen_cahn", "rotation", "burgers", "fokker_planck",
                  "advection6d"]
VALID_METHODS = ["msm", "pinn"]
VALID_STRATEGIES = ["uniform", "prop_u0", "prop_grad_u0_sq"]
VALID_PDE_MODES = ["per_slice", "joint_spacetime"]
VALID_GRAD_MODES = ["exact", "finite_difference"]
VALID_PRESETS = ["paper", "desk"]
VALID_SUITES = ["autodiff", "flow", "transport", "losses"]

CONFIG = "Path to a TOML experiment configuration."
PROBLEM = "Benchmark problem to solve."
PRESET = ("Budget preset: 'paper' reproduces the published budgets, 'desk' "
          "divides epochs by 3 and halves evaluation lattices.")
SEED = "Integer to use as random seed (overrides the configured seeds)."
SEEDS = "Comma-separated list of seeds (overrides the configured seeds)."
METHOD = "Training method: 'msm' (moving samples) or 'pinn' (baseline)."
OUTPUT = "Directory in which to write artifacts."
OUTPUT_FILE = "CSV file to write the lattice values to."
PARALLEL = ("Number of seed runs to execute in parallel. Capped by the "
            "MSM_THREADS environment variable.")
SUITE = "Verification suite to run (repeatable, defaults to all)."
CHECKPOINT = ("Path to a solution-network checkpoint (JSON). The reference "
              "solution is exported when omitted.")
POINTS = "Number of lattice points per spatial axis."
SLICES = "Number of lattice time slices."
