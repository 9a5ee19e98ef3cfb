"""Query Plan Language: parser, validator, interpreter, CTE compiler and evaluation tools."""
from .compile import (
    BackendError,
    CteProgram,
    ResultSet,
    SqliteBackend,
    UnsupportedDialectFeature,
    compile_to_cte,
    execute,
    execution_match,
    results_equivalent,
)
from .core import ColumnDef, ForeignKey, OpKind, QplNode, QplPlan, Relation, SchemaCatalog, TableDef, load_schema
from .interp import Database, eval_plan, load_database
from .parser import Complete, Continuable, QplSyntaxError, Rejected, parse, parse_prefix, pretty_print
from .validator import Diagnostic, validate

__version__ = "0.1.0"
