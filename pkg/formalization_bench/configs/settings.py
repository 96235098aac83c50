# Settings for formalization_bench
import os


BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TEMPLATES_DIR = os.path.join(BASE_DIR, 'templates')
CONFIG_PATH = os.path.join(BASE_DIR, 'configs', 'config.json')
STUB_SYMBOLS_PATH = os.path.join(BASE_DIR, 'configs', 'stub_symbols.json')


STORE_ROOT = 'experiments'  # one sub-directory per experiment id
RUNS_FILENAME = 'runs.jsonl'
TRANSCRIPTS_DIRNAME = 'transcripts'
WORKSPACES_DIRNAME = 'workspaces'
REPORT_DIRNAME = 'report'
LOG_DIR = 'logs'


# Corpus
DOMAINS = ['RealAnalysis', 'ComplexAnalysis', 'Topology', 'Algebra']
CORPUS_FIELDS = ['id', 'domain', 'statement', 'source']
THEOREM_ID_PATTERN = r'[A-Za-z0-9][A-Za-z0-9_.\-]*'  # also a file name


# Agent loop
T_MAX = 24
DEFAULT_CONFIG_CODE = '111'
DEFAULT_ORCHESTRATOR = 'gpt-5.2'
BACKENDS = ['stub', 'replay', 'live', 'record']
SUCCESS_DECLARATION = {'status': 'success'}
LEAN_FILE_SUFFIX = '.lean'
REQUIRED_IMPORT = 'import Mathlib'
STATEMENT_TERMINATOR = ':= by sorry'


# Tools, in the order they are listed in the tool block
TOOL_NAMES = [
    'lean4_translator', 'lean_write_file', 'lean4_repl_runner',
    'lean_inspect_name', 'lean_resolve_name', 'search_online'
]
TOOL_GROUPS = {
    't': ['lean4_translator'],
    'f': ['lean4_repl_runner'],
    's': ['lean_inspect_name', 'lean_resolve_name', 'search_online'],
}
WORKSPACE_TOOL = 'lean_write_file'
SEARCH_TOOLS = TOOL_GROUPS['s']


# Compiler
MATHLIB_SNAPSHOT = 'mathlib4@v4.15.0'  # recorded in every compiler report
COMPILE_TIMEOUT = 120  # seconds
COMPILER_SESSIONS = 4
COMPILE_CACHE_SIZE = 4096  # reports kept per pool, least recently used dropped
RESOLVE_TOP_K = 5
NAMESPACE_HINT_BONUS = 0.1


# Gateway
GATEWAY_RETRY_CAP = 3
GATEWAY_BACKOFF = 2.0  # seconds, doubled on every retry
GATEWAY_TIMEOUT = 300  # seconds per provider call
MAX_IN_FLIGHT_PER_CREDENTIAL = 8
DEFAULT_DECODING = {'temperature': 0}
HTTP_RETRY_CAP = 2  # drafter and search clients


# Judging
FAITHFUL_THRESHOLD = 9
COMPILE_FAIL_MAX_GRADE = 3
JUDGE_RETRY_CAP = 3
PRIMARY_JUDGE = 'gpt-5.2'
SECONDARY_JUDGE = 'gemini-2.5-pro'
JUDGE_KEYS = ['faithful', 'grade', 'thought']
AUDIT_SAMPLE_SIZE = 138


# Analysis
BOOTSTRAP_RESAMPLES = 10_000
BOOTSTRAP_SEED = 20240601
CI_PERCENTILES = (2.5, 97.5)
EFFICIENCY_BUDGETS = list(range(0, T_MAX + 1))
PRECISION_NUMBER = 2
PERCENT_PRECISION_NUMBER = 1


# Credentials are read from the environment only
CREDENTIAL_ENV_VARS = {
    'openai': 'OPENAI_API_KEY',
    'anthropic': 'ANTHROPIC_API_KEY',
    'gemini': 'GEMINI_API_KEY',
    'herald': 'HERALD_API_KEY',
    'search': 'SEARCH_API_KEY',
}


# Exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIGURATION = 3
EXIT_FIXTURE_MISS = 4


# Logging
from models.logger import Logger

logger = Logger(LOG_DIR)
