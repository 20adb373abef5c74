BUILTIN_METHODS = (
    "euler", "heun", "erk3", "erk4_classic", "erk5_fehlberg",
    "gauss1", "gauss2", "gauss3",
    "radau_iia1", "radau_iia2", "radau_iia3",
)

PROBLEM_NAMES = ("sinh", "kubo", "rigid_body")

WEAK_FUNCTIONALS = ("identity", "square", "constant")

STAGE_SOLVERS = ("newton_fd", "fixed_point")

WEAK_ORDERS = (1, 2)

MAX_TREE_ORDER = 12
MAX_LEVELS = 30
MAX_MOMENT = 30

OUTPUT_FORMATS = ("csv", "json")

# Коды завершения CLI
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
