from dotenv import load_dotenv
import os

# Load environment variables from .env file
load_dotenv()

# Settings object shared by every module, mirrors a Flask app.config without the app
config = {}

# LLM provider settings, the key is only needed for the http provider
config['LLM_API_KEY'] = os.environ.get('CHECKMATE_LLM_API_KEY') or None
config['LLM_BASE_URL'] = os.environ.get('CHECKMATE_LLM_BASE_URL') or 'https://api.openai.com/v1'
config['LLM_MODEL'] = os.environ.get('CHECKMATE_LLM_MODEL') or 'gpt-4o'
config['LLM_TEMPERATURE'] = float(os.environ.get('CHECKMATE_LLM_TEMPERATURE') or 0.0)
config['LLM_MAX_TOKENS'] = int(os.environ.get('CHECKMATE_LLM_MAX_TOKENS') or 4096)
config['LLM_TIMEOUT'] = 120  # seconds per request
config['LLM_MAX_RETRIES'] = 4
config['LLM_BACKOFF_SECONDS'] = 1.0

# Conversation budgets
config['JSON_REPAIR_ATTEMPTS'] = 3
config['ALTERNATIVES_PER_FUNCTION'] = 3

# Build and validation settings
config['MAKE'] = os.environ.get('CHECKMATE_MAKE') or 'make'
config['CC'] = os.environ.get('CHECKMATE_CC') or 'gcc'
config['COMPILE_ATTEMPTS'] = 5
config['BUILD_TIMEOUT'] = 300  # seconds per make invocation
config['BISECTION_DEPTH'] = 4
config['RUN_TIMEOUT'] = 10  # seconds per candidate execution

# Tuning settings
config['TUNE_ITERATIONS'] = 150
config['ERROR_BOUND'] = 0.30
config['SEED'] = 0

# Logging
config['LOG_LEVEL'] = os.environ.get('CHECKMATE_LOG_LEVEL') or 'INFO'
