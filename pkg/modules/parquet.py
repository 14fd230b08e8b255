import logging

from modules.evaluation import cells_frame

logger = logging.getLogger(__name__)


class ParquetHandler:
    """Writes the per-cell experiment table (model, participant, seed, mse, ...) to Parquet."""

    def __init__(self, engine="pyarrow"):
        self.engine = engine

    def save_to_parquet(self, df, local_file):
        """Save DataFrame to a Parquet file."""
        try:
            df.to_parquet(local_file, engine=self.engine, index=False)
            logger.info("Saved %d cells to Parquet file: %s", len(df), local_file)
            return df
        except Exception as e:
            logger.error("Error saving to Parquet: %s", e)
            raise

    def run(self, report, local_file):
        """Run the Parquet saving process for an experiment report."""
        return self.save_to_parquet(cells_frame(report), local_file)
