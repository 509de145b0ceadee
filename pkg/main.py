import logging
import os
import uvicorn
from app.main import app

if __name__ == "__main__":
    logging.basicConfig(level=os.getenv("LOG_LEVEL", "INFO").upper())
    uvicorn.run(app, host=os.getenv("CGHDG_HOST", "0.0.0.0"), port=int(os.getenv("CGHDG_PORT", "8000")))
