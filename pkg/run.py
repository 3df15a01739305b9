import os
import sys

import logfire

from dotenv import load_dotenv
load_dotenv()

from interfaces import cli

logfire.configure(
    send_to_logfire='never',
    scrubbing=False,
    console=logfire.ConsoleOptions(min_log_level=os.getenv("HOPF_LOG_LEVEL", "info").lower(), output=sys.stderr),
)

if __name__ == '__main__':
    sys.exit(cli.run(sys.argv[1:]))
