import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

class Config:
    """Process-level defaults for the experiment runner"""

    # Output settings
    OUTPUT_DIR = os.getenv('PMCMC_OUTPUT_DIR', './runs')
    RUN_LOG_NAME = os.getenv('PMCMC_RUN_LOG', 'run_log.jsonl')

    # Logging settings
    LOG_LEVEL = os.getenv('PMCMC_LOG_LEVEL', 'INFO').upper()

    # Sampling defaults - overridden by the experiment config file
    DEFAULT_PARTICLES = int(os.getenv('PMCMC_DEFAULT_PARTICLES', '200'))
    DEFAULT_SEED = int(os.getenv('PMCMC_DEFAULT_SEED', '20091016'))

    # Show tqdm progress bars for chain runs
    PROGRESS = os.getenv('PMCMC_PROGRESS', 'false').lower() == 'true'
